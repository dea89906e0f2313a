"""
protocol.py

The five-round 1-2 string oblivious transfer as two state machines.

Alice holds two q-bit messages m_a, m_b; Bob chooses a side d in {a, b} and
learns m_d. Every secret is drawn when a session is created, so each round
function is a deterministic map from (session, incoming message) to the
outgoing message. A round either succeeds and advances the session stage, or
raises without touching the session.

The masked lists of round 3 and Bob's final search run over the indices
0 .. n(n+1)/2, the full range of sum(sigma(j) * s_j) for a permutation sigma
and a bit vector s.
"""
from __future__ import annotations
import enum
import logging
import random
from dataclasses import dataclass, field
from typing import ClassVar, Optional, Sequence, Tuple, Union

from errors import DegenerateD, ExhaustedAttempts, InvalidStage, LengthMismatch, MalformedMessage, RecoveryFailed
from field_core import (
    FieldElement, Permutation, is_generator, is_permutation, mod_inv, prod_mod,
    sample_generator, sample_permutation,
)
from hashing import BitString, OpCounters, h1, h2, xor_mask
from params import ProtocolParams

logger = logging.getLogger("Protocol")

BitVector = Tuple[int, ...]


class Side(enum.Enum):
    A = "a"
    B = "b"


class AliceStage(enum.IntEnum):
    NEW = 0
    SENT_R1 = 1
    SENT_R3 = 3
    SENT_R5 = 5


class BobStage(enum.IntEnum):
    NEW = 0
    SENT_R2 = 2
    SENT_R4 = 4
    RECOVERED = 6


# --- Messages ---

@dataclass(frozen=True)
class HelloMessage:
    TAG: ClassVar[int] = 0x00
    version: int
    digest: bytes


@dataclass(frozen=True)
class Round1Message:
    TAG: ClassVar[int] = 0x01
    mu_a: Tuple[FieldElement, ...]
    mu_b: Tuple[FieldElement, ...]


@dataclass(frozen=True)
class Round2Message:
    TAG: ClassVar[int] = 0x02
    tau_a: FieldElement
    tau_b: FieldElement


@dataclass(frozen=True)
class Round3Message:
    TAG: ClassVar[int] = 0x03
    s_list_a: Tuple[BitString, ...]
    s_list_b: Tuple[BitString, ...]
    a: FieldElement
    b: FieldElement
    z_a: BitString
    z_b: BitString

    def side(self, side: Side) -> Tuple[FieldElement, Tuple[BitString, ...], BitString]:
        """(d, s_list_d, z_d) for the chosen side."""
        if side is Side.A:
            return self.a, self.s_list_a, self.z_a
        return self.b, self.s_list_b, self.z_b


@dataclass(frozen=True)
class Round4Message:
    TAG: ClassVar[int] = 0x04
    nu: Tuple[FieldElement, ...]


@dataclass(frozen=True)
class Round5Message:
    TAG: ClassVar[int] = 0x05
    tau_B: FieldElement


RoundMessage = Union[HelloMessage, Round1Message, Round2Message, Round3Message, Round4Message, Round5Message]


# --- Index ranges ---

def index_bound(n: int) -> int:
    """Largest attainable sum(sigma(j) * s_j): n(n+1)/2."""
    return n * (n + 1) // 2


def narrow_index_bound(n: int) -> int:
    """n(n-1)/2, too small for e.g. s = all-ones; kept to demonstrate the failure."""
    return n * (n - 1) // 2


def mask_count(n: int) -> int:
    """K, the number of masked strings per side in round 3."""
    return index_bound(n) + 1


def exponent_offset(perm: Permutation, bits: Sequence[int]) -> int:
    """sum(perm(j) * bits_j): k' for (sigma_d, s) or r' for (rho, t)."""
    return sum(image * bit for image, bit in zip(perm, bits))


def eval_f(params: ProtocolParams, t: Sequence[int], s: Sequence[int], y: FieldElement) -> FieldElement:
    """f(y) = prod over i, j of (y + c_{i,j})^(t_i s_j); the empty product is 1."""
    p = params.p
    return prod_mod(((y + params.C[i][j]) % p
                     for i in range(params.n) if t[i]
                     for j in range(params.n) if s[j]), params.fp)


def tau_identity_check(params: ProtocolParams, t: Sequence[int], s: Sequence[int], d: FieldElement,
                       alpha_d: FieldElement, sigma_d: Permutation, tau: FieldElement) -> bool:
    """tau_{A,d} == alpha_d^k' * f(d) with k' = sum(sigma_d(j) * s_j)."""
    k_prime = exponent_offset(sigma_d, s)
    return tau == (pow(alpha_d, k_prime, params.p) * eval_f(params, t, s, d)) % params.p


def tau_b_identity_check(params: ProtocolParams, t: Sequence[int], s: Sequence[int], d: FieldElement,
                         beta: FieldElement, rho: Permutation, tau_B: FieldElement) -> bool:
    """tau_B == beta^r' * f(d) with r' = sum(rho(i) * t_i)."""
    r_prime = exponent_offset(rho, t)
    return tau_B == (pow(beta, r_prime, params.p) * eval_f(params, t, s, d)) % params.p


def _random_bits(n: int, rng: random.Random) -> BitVector:
    return tuple(rng.getrandbits(1) for _ in range(n))


def forbidden_points(params: ProtocolParams) -> frozenset:
    return frozenset((-c) % params.p for row in params.C for c in row)


# --- Sessions ---

@dataclass
class AliceSession:
    """Alice's secrets and progress. Secret fields stay out of repr so they never reach logs."""
    params: ProtocolParams = field(repr=False)
    t: BitVector = field(repr=False)
    a: FieldElement = field(repr=False)
    b: FieldElement = field(repr=False)
    alpha_a: FieldElement = field(repr=False)
    alpha_b: FieldElement = field(repr=False)
    sigma_a: Permutation = field(repr=False)
    sigma_b: Permutation = field(repr=False)
    m_a: BitString = field(repr=False)
    m_b: BitString = field(repr=False)
    stage: AliceStage = AliceStage.NEW
    counters: OpCounters = field(default_factory=OpCounters)

    def __post_init__(self):
        n, fp = self.params.n, self.params.fp
        if len(self.t) != n or any(bit not in (0, 1) for bit in self.t):
            raise ValueError(f"t must be {n} bits")
        forbidden = forbidden_points(self.params)
        if self.a == self.b or not (fp.contains(self.a) and fp.contains(self.b)):
            raise ValueError("a and b must be distinct field elements")
        if self.a in forbidden or self.b in forbidden:
            raise ValueError("a + c_{i,j} and b + c_{i,j} must be nonzero")
        if self.alpha_a == self.alpha_b or not (is_generator(self.alpha_a, fp) and is_generator(self.alpha_b, fp)):
            raise ValueError("alpha_a and alpha_b must be distinct generators")
        if not (is_permutation(self.sigma_a, n) and is_permutation(self.sigma_b, n)):
            raise ValueError(f"sigma_a and sigma_b must be permutations of 1..{n}")
        if self.m_a.length != self.params.q or self.m_b.length != self.params.q:
            raise LengthMismatch(f"messages must be {self.params.q} bits")

    @classmethod
    def start(cls, params: ProtocolParams, rng: random.Random,
              m_a: Optional[BitString] = None, m_b: Optional[BitString] = None) -> AliceSession:
        """Draws t, a, b, alpha_a, alpha_b, sigma_a, sigma_b (and random messages when none are given)."""
        n, fp = params.n, params.fp
        t = _random_bits(n, rng)
        forbidden = forbidden_points(params)
        budget = 64 * max(fp.p.bit_length(), 16)
        a = _sample_avoiding(fp.p, forbidden, rng, budget)
        b = _sample_avoiding(fp.p, forbidden | {a}, rng, budget)
        alpha_a = sample_generator(fp, rng)
        alpha_b = sample_generator(fp, rng, exclude={alpha_a})
        sigma_a = sample_permutation(n, rng)
        sigma_b = sample_permutation(n, rng)
        if m_a is None:
            m_a = BitString.random(params.q, rng)
        if m_b is None:
            m_b = BitString.random(params.q, rng)
        return cls(params=params, t=t, a=a, b=b, alpha_a=alpha_a, alpha_b=alpha_b,
                   sigma_a=sigma_a, sigma_b=sigma_b, m_a=m_a, m_b=m_b)


@dataclass
class BobSession:
    params: ProtocolParams = field(repr=False)
    s: BitVector = field(repr=False)
    beta: FieldElement = field(repr=False)
    rho: Permutation = field(repr=False)
    stage: BobStage = BobStage.NEW
    d_side: Optional[Side] = field(default=None, repr=False)
    mu_a: Tuple[FieldElement, ...] = field(default=(), repr=False)
    mu_b: Tuple[FieldElement, ...] = field(default=(), repr=False)
    r3: Optional[Round3Message] = field(default=None, repr=False)
    recovered: Optional[BitString] = field(default=None, repr=False)
    counters: OpCounters = field(default_factory=OpCounters)

    def __post_init__(self):
        n = self.params.n
        if len(self.s) != n or any(bit not in (0, 1) for bit in self.s):
            raise ValueError(f"s must be {n} bits")
        if not is_generator(self.beta, self.params.fp):
            raise ValueError("beta must be a generator")
        if not is_permutation(self.rho, n):
            raise ValueError(f"rho must be a permutation of 1..{n}")

    @classmethod
    def start(cls, params: ProtocolParams, rng: random.Random) -> BobSession:
        s = _random_bits(params.n, rng)
        beta = sample_generator(params.fp, rng)
        rho = sample_permutation(params.n, rng)
        return cls(params=params, s=s, beta=beta, rho=rho)


def _sample_avoiding(p: int, forbidden: frozenset, rng: random.Random, budget: int) -> FieldElement:
    for _ in range(budget):
        x = rng.randrange(p)
        if x not in forbidden:
            return x
    raise ExhaustedAttempts(f"no element of F_{p} outside the {len(forbidden)} forbidden values")


# --- Message checks ---

def _check_elements(values: Sequence[int], count: int, params: ProtocolParams, what: str) -> None:
    """Every entry must be a unit of F_p; blinded products are never zero."""
    if len(values) != count:
        raise MalformedMessage(f"{what}: expected {count} elements, got {len(values)}")
    for i, v in enumerate(values):
        if not 0 < v < params.p:
            raise MalformedMessage(f"{what}[{i}] = {v} is not a unit of F_{params.p}")


def _check_stage(actual, expected, operation: str) -> None:
    if actual != expected:
        raise InvalidStage(f"{operation} needs stage {expected.name}, session is at {actual.name}")


# --- Rounds ---

def alice_round1(session: AliceSession) -> Round1Message:
    """mu_{j,a} = alpha_a^sigma_a(j) * prod_i (a + c_{i,j})^t_i, and likewise for b."""
    _check_stage(session.stage, AliceStage.NEW, "alice_round1")
    params, p = session.params, session.params.p

    def blinded(d: FieldElement, alpha: FieldElement, sigma: Permutation) -> Tuple[FieldElement, ...]:
        return tuple(
            (pow(alpha, sigma[j], p)
             * prod_mod(((d + params.C[i][j]) % p for i in range(params.n) if session.t[i]), params.fp)) % p
            for j in range(params.n)
        )

    message = Round1Message(mu_a=blinded(session.a, session.alpha_a, session.sigma_a),
                            mu_b=blinded(session.b, session.alpha_b, session.sigma_b))
    session.stage = AliceStage.SENT_R1
    return message


def bob_round2(session: BobSession, r1: Round1Message) -> Round2Message:
    """tau_{A,a} = prod_j mu_{j,a}^s_j and tau_{A,b} = prod_j mu_{j,b}^s_j."""
    _check_stage(session.stage, BobStage.NEW, "bob_round2")
    params = session.params
    _check_elements(r1.mu_a, params.n, params, "mu_a")
    _check_elements(r1.mu_b, params.n, params, "mu_b")

    tau_a = prod_mod((mu for mu, bit in zip(r1.mu_a, session.s) if bit), params.fp)
    tau_b = prod_mod((mu for mu, bit in zip(r1.mu_b, session.s) if bit), params.fp)
    session.mu_a, session.mu_b = tuple(r1.mu_a), tuple(r1.mu_b)
    session.stage = BobStage.SENT_R2
    return Round2Message(tau_a=tau_a, tau_b=tau_b)


def _masked_list(params: ProtocolParams, alpha: FieldElement, tau: FieldElement, m: BitString,
                 counters: OpCounters) -> Tuple[BitString, ...]:
    """s_k = h1(alpha^-k * tau) XOR m for k = 0 .. n(n+1)/2."""
    step = mod_inv(alpha, params.fp)
    x, masked = tau, []
    for _ in range(mask_count(params.n)):
        masked.append(xor_mask(h1(x, params.h1_spec, params.fp, counters), m))
        x = (x * step) % params.p
    return tuple(masked)


def alice_round3(session: AliceSession, r2: Round2Message) -> Round3Message:
    _check_stage(session.stage, AliceStage.SENT_R1, "alice_round3")
    params = session.params
    _check_elements((r2.tau_a, r2.tau_b), 2, params, "tau_A")

    counters = OpCounters()
    message = Round3Message(
        s_list_a=_masked_list(params, session.alpha_a, r2.tau_a, session.m_a, counters),
        s_list_b=_masked_list(params, session.alpha_b, r2.tau_b, session.m_b, counters),
        a=session.a,
        b=session.b,
        z_a=h2(session.m_a, params.h2_spec, counters),
        z_b=h2(session.m_b, params.h2_spec, counters),
    )
    session.counters = session.counters.merged(counters)
    session.stage = AliceStage.SENT_R3
    return message


def _check_round3(r3: Round3Message, params: ProtocolParams) -> None:
    K = mask_count(params.n)
    for name, masked in (("s_list_a", r3.s_list_a), ("s_list_b", r3.s_list_b)):
        if len(masked) != K:
            raise MalformedMessage(f"{name}: expected {K} strings, got {len(masked)}")
        if any(entry.length != params.q for entry in masked):
            raise MalformedMessage(f"{name}: entries must be {params.q} bits")
    if not (params.fp.contains(r3.a) and params.fp.contains(r3.b)):
        raise MalformedMessage("a or b is not an element of F_p")
    if r3.z_a.length != params.qprime or r3.z_b.length != params.qprime:
        raise MalformedMessage(f"z_a and z_b must be {params.qprime} bits")


def bob_round4(session: BobSession, r3: Round3Message, choice: Side) -> Round4Message:
    """nu_i = beta^rho(i) * prod_j (d + c_{i,j})^s_j with d the element of the chosen side."""
    _check_stage(session.stage, BobStage.SENT_R2, "bob_round4")
    params, p = session.params, session.params.p
    _check_round3(r3, params)
    d = r3.a if choice is Side.A else r3.b
    if d in forbidden_points(params):
        raise DegenerateD(f"d + c_(i,j) = 0 for the received {choice.value}; round 3 is corrupted")

    nu = tuple(
        (pow(session.beta, session.rho[i], p)
         * prod_mod(((d + params.C[i][j]) % p for j in range(params.n) if session.s[j]), params.fp)) % p
        for i in range(params.n)
    )
    session.d_side, session.r3 = choice, r3
    session.stage = BobStage.SENT_R4
    return Round4Message(nu=nu)


def alice_round5(session: AliceSession, r4: Round4Message) -> Round5Message:
    """tau_B = prod_i nu_i^t_i."""
    _check_stage(session.stage, AliceStage.SENT_R3, "alice_round5")
    params = session.params
    _check_elements(r4.nu, params.n, params, "nu")
    tau_B = prod_mod((nu for nu, bit in zip(r4.nu, session.t) if bit), params.fp)
    session.stage = AliceStage.SENT_R5
    return Round5Message(tau_B=tau_B)


def recovery_search(params: ProtocolParams, beta: FieldElement, tau_B: FieldElement,
                    s_list: Sequence[BitString], z: BitString, r_range: range, k_range: range,
                    counters: Optional[OpCounters] = None) -> Optional[BitString]:
    """
    Looks for (r, k) with h2(h1(beta^-r * tau_B) XOR s_k) == z, r outer and k
    inner, ascending. h2 is injective, so the first hit is the message.
    """
    step = mod_inv(beta, params.fp)
    x = (tau_B * pow(step, r_range.start, params.p)) % params.p
    for _ in r_range:
        pad = h1(x, params.h1_spec, params.fp, counters)
        for k in k_range:
            candidate = xor_mask(pad, s_list[k])
            if h2(candidate, params.h2_spec, counters) == z:
                return candidate
        x = (x * step) % params.p
    return None


def bob_recover(session: BobSession, r5: Round5Message) -> BitString:
    _check_stage(session.stage, BobStage.SENT_R4, "bob_recover")
    params = session.params
    _check_elements((r5.tau_B,), 1, params, "tau_B")
    _, s_list, z = session.r3.side(session.d_side)

    full = range(0, index_bound(params.n) + 1)
    counters = OpCounters()
    m_d = recovery_search(params, session.beta, r5.tau_B, s_list, z, full, full, counters)
    session.counters = session.counters.merged(counters)
    if m_d is None:
        raise RecoveryFailed("no (r, k) reproduces z_d; transcript corrupted or parameters differ")

    session.recovered = m_d
    session.stage = BobStage.RECOVERED
    logger.debug(f"Recovered m_{session.d_side.value} after {counters.h2_calls} h2 calls")
    return m_d
