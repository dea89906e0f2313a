"""
analysis.py

Desk-scale cryptanalysis of the transfer:

  * a discrete-log oracle for small fields (full power table or baby-step giant-step),
  * the linear system an eavesdropping Bob gets by taking logs of round 4 and 5,
    sum(x_i * dlog(nu_i)) == dlog(tau_B) mod p-1, with its exhaustive solver and
    a solution-density experiment,
  * the permuted subset problem (x in {0,1}^n and a permutation pi with
    sum_j x_j * e_ij + pi(i) == f_i mod p-1) with brute-force search,
    a decision procedure and the decision-to-search self-reduction.

Everything here is exponential on purpose and guarded by explicit size budgets.
"""
from __future__ import annotations
import csv
import itertools
import logging
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from statistics import mean
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple

from errors import BudgetExceeded, InconsistentDecision, InvalidStage, OutOfRange, UsageError
from field_core import (
    FieldElement, FieldParams, Permutation, is_generator, is_probable_prime, mod_inv, sample_generator,
)
from hashing import BitString, H2Spec, h1, h2, make_h2_spec, xor_mask
from params import ProtocolParams, prime_floor, setup
from protocol import (
    AliceSession, BitVector, BobSession, Round1Message, Round2Message, Round4Message, Round5Message,
    Side, forbidden_points, alice_round1, alice_round3, alice_round5, bob_round2, bob_round4,
    eval_f, mask_count,
)
from transport import Transcript

logger = logging.getLogger("Analysis")

METHOD_EXHAUSTIVE = "exhaustive"
METHOD_BSGS = "bsgs"
EXHAUSTIVE_MAX_P = 1 << 24
BSGS_MAX_P = 1 << 40
AUTO_EXHAUSTIVE_MAX_P = 1 << 20

LOG_SYSTEM_MAX_N = 24
DENSITY_MAX_N = 16
PERMUTED_SUBSET_MAX_N = 8
DENSITY_Q = 16

CSV_COLUMNS = ("seed", "n", "p", "measured_count", "predicted")


# --- Discrete logarithms ---

@dataclass
class DlogOracle:
    """
    Answers dlog_g(y) in F_p^x. The exhaustive method keeps the whole power
    table; bsgs keeps ceil(sqrt(p-1)) baby steps and walks giant steps per query.
    """
    g: FieldElement
    fp: FieldParams
    method: str = METHOD_BSGS
    table: Dict[int, int] = field(default_factory=dict, repr=False)
    giant_step: int = field(default=0, repr=False)
    step_count: int = field(default=0, repr=False)

    @classmethod
    def build(cls, g: FieldElement, fp: FieldParams, method: Optional[str] = None) -> DlogOracle:
        """Precomputes the step table. `method` defaults to exhaustive up to 2^20 and bsgs above."""
        p = fp.p
        if method is None:
            method = METHOD_EXHAUSTIVE if p <= AUTO_EXHAUSTIVE_MAX_P else METHOD_BSGS
        if method == METHOD_EXHAUSTIVE and p > EXHAUSTIVE_MAX_P:
            raise OutOfRange(f"exhaustive power table limited to p <= 2^24, got {p.bit_length()} bits")
        if method == METHOD_BSGS and p > BSGS_MAX_P:
            raise OutOfRange(f"baby-step giant-step limited to p <= 2^40, got {p.bit_length()} bits")
        if method not in (METHOD_EXHAUSTIVE, METHOD_BSGS):
            raise UsageError(f"unknown dlog method '{method}'")
        if not is_generator(g, fp):
            raise UsageError(f"{g} does not generate F_{p}^x")

        oracle = cls(g=g, fp=fp, method=method)
        order = p - 1
        count = order if method == METHOD_EXHAUSTIVE else math.isqrt(order - 1) + 1 if order > 1 else 1
        x = 1
        for exponent in range(count):
            oracle.table.setdefault(x, exponent)
            x = (x * g) % p
        oracle.step_count = count
        if method == METHOD_BSGS:
            oracle.giant_step = pow(g, -count, p)
        logger.debug(f"dlog oracle for p={p}, g={g}: {method}, {len(oracle.table)} table entries")
        return oracle


def dlog(oracle: DlogOracle, y: FieldElement) -> int:
    """Exponent e in [0, p-2] with g^e == y."""
    p = oracle.fp.p
    y %= p
    if y == 0:
        raise OutOfRange("0 has no discrete logarithm")
    if oracle.method == METHOD_EXHAUSTIVE:
        return oracle.table[y]

    gamma = y
    for i in range(oracle.step_count):
        j = oracle.table.get(gamma)
        if j is not None:
            return (i * oracle.step_count + j) % (p - 1)
        gamma = (gamma * oracle.giant_step) % p
    raise OutOfRange(f"{y} not reached from g = {oracle.g}")


def dlog_cross_check(fp: FieldParams, g: FieldElement) -> int:
    """Number of y in F_p^x where baby-step giant-step and the full power table disagree."""
    exhaustive = DlogOracle.build(g, fp, METHOD_EXHAUSTIVE)
    bsgs = DlogOracle.build(g, fp, METHOD_BSGS)
    mismatches = sum(1 for y in range(1, fp.p) if dlog(exhaustive, y) != dlog(bsgs, y))
    logger.info(f"dlog cross-check at p={fp.p}: {mismatches} mismatches over {fp.p - 1} elements")
    return mismatches


def _check_field(oracle: DlogOracle, params: ProtocolParams) -> None:
    if oracle.fp.p != params.p:
        raise UsageError(f"oracle works in F_{oracle.fp.p}, transcript in F_{params.p}")


# --- The log-linear system ---

@dataclass(frozen=True)
class LogSystem:
    """sum(x_i * coeffs_i) == target (mod modulus) over bit vectors x."""
    coeffs: Tuple[int, ...]
    target: int
    modulus: int

    def __post_init__(self):
        if self.modulus < 1:
            raise ValueError("modulus must be positive")
        if not all(0 <= c < self.modulus for c in self.coeffs) or not 0 <= self.target < self.modulus:
            raise ValueError(f"coefficients and target must be reduced mod {self.modulus}")

    @property
    def n(self) -> int:
        return len(self.coeffs)

    def satisfied_by(self, x: Sequence[int]) -> bool:
        return sum(c for c, bit in zip(self.coeffs, x) if bit) % self.modulus == self.target


def log_system_from(values: Sequence[FieldElement], product: FieldElement, oracle: DlogOracle) -> LogSystem:
    return LogSystem(coeffs=tuple(dlog(oracle, v) for v in values),
                     target=dlog(oracle, product),
                     modulus=oracle.fp.p - 1)


def build_log_system(transcript: Transcript, oracle: DlogOracle) -> LogSystem:
    """Bob's view: logs of nu_1..nu_n against the log of tau_B; Alice's t is a solution."""
    _check_field(oracle, transcript.params)
    r4 = transcript.message(Round4Message)
    r5 = transcript.message(Round5Message)
    return log_system_from(r4.nu, r5.tau_B, oracle)


def build_alice_log_system(transcript: Transcript, oracle: DlogOracle, side: Side) -> LogSystem:
    """Alice's mirror view: logs of mu_{j,side} against the log of tau_{A,side}; Bob's s is a solution."""
    _check_field(oracle, transcript.params)
    r1 = transcript.message(Round1Message)
    r2 = transcript.message(Round2Message)
    if side is Side.A:
        return log_system_from(r1.mu_a, r2.tau_a, oracle)
    return log_system_from(r1.mu_b, r2.tau_b, oracle)


def _check_budget(n: int, limit: int, what: str) -> None:
    if n > limit:
        raise BudgetExceeded(f"{what} is limited to n <= {limit}, got n = {n}")


def enumerate_log_solutions(inst: LogSystem, max_n: int = LOG_SYSTEM_MAX_N) -> List[BitVector]:
    """All 2^n bit vectors in Gray-code order, one add or subtract per step; returned sorted."""
    n, modulus = inst.n, inst.modulus
    _check_budget(n, max_n, "log system enumeration")
    x = [0] * n
    total = 0
    solutions = [tuple(x)] if inst.target == 0 else []
    for i in range(1, 1 << n):
        j = (i & -i).bit_length() - 1
        if x[j]:
            total -= inst.coeffs[j]
        else:
            total += inst.coeffs[j]
        x[j] ^= 1
        total %= modulus
        if total == inst.target:
            solutions.append(tuple(x))
    solutions.sort()
    return solutions


# --- Solution density ---

def predicted_solution_count(n: int, p: int) -> float:
    """2^(n - log2 p): 2^n candidates hitting one of about p residues."""
    return 2.0 ** (n - math.log2(p))


@dataclass(frozen=True)
class DensityRow:
    seed: int
    n: int
    p: int
    measured_count: int
    predicted: float
    planted_found: bool = True


@dataclass
class DensityReport:
    n: int
    p: int
    source: str
    rows: List[DensityRow] = field(default_factory=list)

    @property
    def predicted(self) -> float:
        return predicted_solution_count(self.n, self.p)

    @property
    def mean_count(self) -> float:
        return mean(row.measured_count for row in self.rows) if self.rows else 0.0

    @property
    def planted_always_found(self) -> bool:
        return all(row.planted_found for row in self.rows)

    def within_band(self, factor: float = 4.0) -> bool:
        return self.predicted / factor <= self.mean_count <= self.predicted * factor

    def to_csv(self, stream: TextIO) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow((row.seed, row.n, row.p, row.measured_count, f"{row.predicted:.4f}"))

    def summary(self) -> str:
        counts = [row.measured_count for row in self.rows]
        ratio = self.mean_count / self.predicted if self.predicted else float("nan")
        return (f"n={self.n} p={self.p} trials={len(self.rows)} source={self.source}: "
                f"mean={self.mean_count:.3f} predicted={self.predicted:.3f} ratio={ratio:.2f} "
                f"min={min(counts, default=0)} max={max(counts, default=0)} "
                f"planted_always_found={self.planted_always_found}")


def _protocol_round5(params: ProtocolParams, rng: random.Random) -> Tuple[BitVector, Tuple[int, ...], int]:
    """One genuine run up to round 5, returning Alice's t, nu and tau_B."""
    alice = AliceSession.start(params, rng)
    bob = BobSession.start(params, rng)
    r2 = bob_round2(bob, alice_round1(alice))
    r3 = alice_round3(alice, r2)
    r4 = bob_round4(bob, r3, rng.choice((Side.A, Side.B)))
    r5 = alice_round5(alice, r4)
    return alice.t, r4.nu, r5.tau_B


def _simulated_round5(n: int, p: int, rng: random.Random) -> Tuple[BitVector, Tuple[int, ...], int]:
    """Uniform units nu_i and a planted t, for fields too small to host a real session."""
    t = tuple(rng.getrandbits(1) for _ in range(n))
    nu = tuple(rng.randrange(1, p) for _ in range(n))
    tau_B = 1
    for value, bit in zip(nu, t):
        if bit:
            tau_B = (tau_B * value) % p
    return t, nu, tau_B


def _density_trial(n: int, fp: FieldParams, oracle: DlogOracle, h2_spec: Optional[H2Spec],
                   seed: int) -> DensityRow:
    rng = random.Random(seed)
    if h2_spec is None:
        t, nu, tau_B = _simulated_round5(n, fp.p, rng)
    else:
        params = setup(n, rng, p=fp.p, q=DENSITY_Q, p_factors=fp.prime_factors_of_group_order, h2_spec=h2_spec)
        t, nu, tau_B = _protocol_round5(params, rng)
    solutions = enumerate_log_solutions(log_system_from(nu, tau_B, oracle))
    return DensityRow(seed=seed, n=n, p=fp.p, measured_count=len(solutions),
                      predicted=predicted_solution_count(n, fp.p), planted_found=t in solutions)


def solution_density_experiment(n: int, trials: int, rng: random.Random, p: Optional[int] = None,
                                workers: int = 1) -> DensityReport:
    """
    Counts the solutions of the round 4/5 log system over `trials` fresh transcripts.

    Args:
        n: Dimension, at most 16.
        trials: Number of independent transcripts.
        rng: Source for the per-trial seeds and the shared h2 group.
        p: Field prime; generated as setup would when omitted. When p <= n^2 + 2
           no session can exist, and round 5 is simulated from uniform nu_i.
        workers: Trials run on a process pool when greater than 1.

    Raises:
        BudgetExceeded: n > 16.
        UsageError: p is given but is not an odd prime.
    """
    _check_budget(n, DENSITY_MAX_N, "the density experiment")
    if trials < 1:
        raise UsageError("trials must be positive")
    if p is not None and (p < 3 or not is_probable_prime(p)):
        raise UsageError(f"p = {p} is not an odd prime")

    h2_spec = make_h2_spec(DENSITY_Q, rng)
    if p is None:
        fp = setup(n, rng, q=DENSITY_Q, h2_spec=h2_spec).fp
    else:
        fp = FieldParams.from_prime(p)
    simulated = fp.p <= prime_floor(n)
    oracle = DlogOracle.build(sample_generator(fp, rng), fp)
    seeds = [rng.getrandbits(63) for _ in range(trials)]
    trial_h2 = None if simulated else h2_spec
    logger.info(f"Density experiment: n={n}, p={fp.p}, {trials} trials, "
                f"{'simulated' if simulated else 'protocol'} transcripts, {workers} worker(s)")

    report = DensityReport(n=n, p=fp.p, source="simulated" if simulated else "protocol")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            report.rows = list(pool.map(_density_trial, itertools.repeat(n), itertools.repeat(fp),
                                        itertools.repeat(oracle), itertools.repeat(trial_h2), seeds))
    else:
        report.rows = [_density_trial(n, fp, oracle, trial_h2, seed) for seed in seeds]
    logger.info(report.summary())
    return report


# --- Permuted subset problem ---

@dataclass(frozen=True)
class PermutedSubsetInstance:
    """
    Find x in {0,1}^n and a permutation pi of 1..n with
    sum_j x_j * E[i][j] + pi(i) == f_vec[i] (mod modulus) for every row i.

    fixed_x and fixed_pi hold (index, value) pairs the solution must respect;
    the self-reduction grows them one entry at a time.
    """
    n: int
    modulus: int
    E: Tuple[Tuple[int, ...], ...]
    f_vec: Tuple[int, ...]
    fixed_x: Tuple[Tuple[int, int], ...] = ()
    fixed_pi: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.n < 1 or self.modulus < 2:
            raise ValueError("need n >= 1 and modulus >= 2")
        if len(self.E) != self.n or any(len(row) != self.n for row in self.E) or len(self.f_vec) != self.n:
            raise ValueError(f"E must be {self.n}x{self.n} and f_vec of length {self.n}")
        values = [e for row in self.E for e in row] + list(self.f_vec)
        if not all(0 <= v < self.modulus for v in values):
            raise ValueError(f"entries must be reduced mod {self.modulus}")

    def restrict_x(self, j: int, bit: int) -> PermutedSubsetInstance:
        return replace(self, fixed_x=self.fixed_x + ((j, bit),))

    def restrict_pi(self, i: int, image: int) -> PermutedSubsetInstance:
        return replace(self, fixed_pi=self.fixed_pi + ((i, image),))

    def satisfied_by(self, x: Sequence[int], pi: Permutation) -> bool:
        return all(
            (sum(xj * e for xj, e in zip(x, row)) + pi[i] - self.f_vec[i]) % self.modulus == 0
            for i, row in enumerate(self.E)
        )


def plant_permuted_subset(n: int, modulus: int, rng: random.Random) -> Tuple[PermutedSubsetInstance, BitVector, Permutation]:
    """Random E, a chosen (x*, pi*) and the f_vec they induce."""
    E = tuple(tuple(rng.randrange(modulus) for _ in range(n)) for _ in range(n))
    x = tuple(rng.getrandbits(1) for _ in range(n))
    images = list(range(1, n + 1))
    rng.shuffle(images)
    pi = tuple(images)
    f_vec = tuple((sum(xj * e for xj, e in zip(x, row)) + pi[i]) % modulus for i, row in enumerate(E))
    return PermutedSubsetInstance(n=n, modulus=modulus, E=E, f_vec=f_vec), x, pi


def next_permutation(perm: Permutation) -> Optional[Permutation]:
    """Lexicographic successor, or None after the last permutation."""
    items = list(perm)
    i = len(items) - 2
    while i >= 0 and items[i] >= items[i + 1]:
        i -= 1
    if i < 0:
        return None
    j = len(items) - 1
    while items[j] <= items[i]:
        j -= 1
    items[i], items[j] = items[j], items[i]
    items[i + 1:] = reversed(items[i + 1:])
    return tuple(items)


def _matching_permutation(residues: Sequence[int], modulus: int, n: int,
                          fixed_pi: Dict[int, int]) -> Optional[Permutation]:
    # Rows whose residue no image in 1..n can hit rule out this x at once.
    if any(all((v - r) % modulus for v in range(1, n + 1)) for r in residues):
        return None
    perm: Optional[Permutation] = tuple(range(1, n + 1))
    while perm is not None:
        if (all(perm[i] == image for i, image in fixed_pi.items())
                and all((image - r) % modulus == 0 for image, r in zip(perm, residues))):
            return perm
        perm = next_permutation(perm)
    return None


def permuted_subset_search(inst: PermutedSubsetInstance,
                      max_n: int = PERMUTED_SUBSET_MAX_N) -> Optional[Tuple[BitVector, Permutation]]:
    """Scans x in lexicographic order and, for each, permutations lazily; first hit wins."""
    n = inst.n
    _check_budget(n, max_n, "permuted subset search")
    fixed_x, fixed_pi = dict(inst.fixed_x), dict(inst.fixed_pi)
    for x in itertools.product((0, 1), repeat=n):
        if any(x[j] != bit for j, bit in fixed_x.items()):
            continue
        residues = [(f - sum(xj * e for xj, e in zip(x, row))) % inst.modulus
                    for row, f in zip(inst.E, inst.f_vec)]
        perm = _matching_permutation(residues, inst.modulus, n, fixed_pi)
        if perm is not None:
            return x, perm
    return None


def permuted_subset_decide(inst: PermutedSubsetInstance, max_n: int = PERMUTED_SUBSET_MAX_N) -> bool:
    return permuted_subset_search(inst, max_n) is not None


def permuted_subset_search_by_decision(
    inst: PermutedSubsetInstance,
    decide: Callable[[PermutedSubsetInstance], bool] = permuted_subset_decide,
) -> Optional[Tuple[BitVector, Permutation]]:
    """
    Builds a solution using only yes/no answers: fixes x_1..x_n and then
    pi(1)..pi(n) one entry at a time, keeping each restriction that stays solvable.
    Needs at most n + n^2 calls to `decide`.

    Raises:
        InconsistentDecision: `decide` accepted an instance but rejected every
            way of fixing the next permutation entry.
    """
    if not decide(inst):
        return None
    for j in range(inst.n):
        zero = inst.restrict_x(j, 0)
        inst = zero if decide(zero) else inst.restrict_x(j, 1)

    used = set()
    for i in range(inst.n):
        for image in range(1, inst.n + 1):
            if image in used:
                continue
            candidate = inst.restrict_pi(i, image)
            if decide(candidate):
                inst = candidate
                used.add(image)
                break
        else:
            raise InconsistentDecision(f"no image of {i + 1} keeps the instance solvable")

    x = tuple(bit for _, bit in sorted(inst.fixed_x))
    pi = tuple(image for _, image in sorted(inst.fixed_pi))
    return x, pi


# --- Attacks on a transcript ---

def recover_alpha_power(transcript: Transcript, oracle: DlogOracle, f_d: FieldElement,
                        side: Optional[Side] = None) -> FieldElement:
    """tau_{A,d} * f(d)^-1 == alpha_d^k'. `side` defaults to the side Bob chose."""
    _check_field(oracle, transcript.params)
    side = side or transcript.choice
    r2 = transcript.message(Round2Message)
    tau = r2.tau_a if side is Side.A else r2.tau_b
    return (tau * mod_inv(f_d, oracle.fp)) % oracle.fp.p


def recover_messages_from_t(bob: BobSession, t: Sequence[int]) -> Dict[Side, Optional[BitString]]:
    """
    With Alice's bits t, Bob evaluates f at both a and b. Each s_{k,d} is
    h1(f(d)) XOR m_d for the right k, so one h1 call and at most K h2 calls
    per side expose both messages.
    """
    if bob.r3 is None:
        raise InvalidStage("Bob has not received round 3 yet")
    params = bob.params
    forbidden = forbidden_points(params)
    found: Dict[Side, Optional[BitString]] = {}
    for side in (Side.A, Side.B):
        d, s_list, z = bob.r3.side(side)
        found[side] = None
        if d in forbidden:
            continue
        pad = h1(eval_f(params, t, bob.s, d), params.h1_spec, params.fp)
        for k in range(mask_count(params.n)):
            candidate = xor_mask(pad, s_list[k])
            if h2(candidate, params.h2_spec) == z:
                found[side] = candidate
                break
    return found


@dataclass
class AttackReport:
    candidates: int
    tried: int
    recovered: Dict[Side, BitString] = field(default_factory=dict, repr=False)
    t: Optional[BitVector] = field(default=None, repr=False)

    @property
    def both_recovered(self) -> bool:
        return Side.A in self.recovered and Side.B in self.recovered


def log_system_attack(transcript: Transcript, bob: BobSession, oracle: DlogOracle) -> AttackReport:
    """Tries every solution of Bob's log system as Alice's t until both messages fall out."""
    solutions = enumerate_log_solutions(build_log_system(transcript, oracle))
    report = AttackReport(candidates=len(solutions), tried=0)
    for t in solutions:
        report.tried += 1
        found = recover_messages_from_t(bob, t)
        if all(found.values()):
            report.recovered = dict(found)
            report.t = t
            break
    logger.info(f"Log system attack: {report.candidates} candidates, {report.tried} tried, "
                f"both messages {'recovered' if report.both_recovered else 'not recovered'}")
    return report
