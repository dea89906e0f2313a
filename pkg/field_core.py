"""
field_core.py

Arithmetic in the prime field F_p: exponentiation and inversion, safe-prime
generation, and sampling of generators and permutations.

Field elements are plain Python ints in [0, p-1]; `FieldParams` carries the
modulus together with the factorisation of the group order p-1 that generator
checks rely on.
"""
from __future__ import annotations
import logging
import random
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Optional, Tuple, AbstractSet

from sympy import factorint, primerange

from errors import ExhaustedAttempts, UsageError, ZeroInverse

logger = logging.getLogger("FieldCore")

FieldElement = int
Permutation = Tuple[int, ...]  # perm[j-1] = sigma(j), images in 1..n

MILLER_RABIN_ROUNDS = 64
# Below this size every candidate is scanned, so a missing prime is reported exactly.
SMALL_SCAN_BITS = 16
SMALL_PRIMES: Tuple[int, ...] = tuple(primerange(3, 2000))

_witness_rng = random.SystemRandom()


@dataclass(frozen=True)
class FieldParams:
    """The prime modulus p and the distinct prime factors of p-1."""
    p: int
    prime_factors_of_group_order: Tuple[int, ...] = field(default_factory=tuple)
    cofactor_u: Optional[int] = None

    @property
    def elem_width_bytes(self) -> int:
        return max(1, (self.p.bit_length() + 7) // 8)

    @property
    def group_order(self) -> int:
        return self.p - 1

    @classmethod
    def from_prime(cls, p: int, factors: Optional[Iterable[int]] = None) -> FieldParams:
        """Wraps an externally supplied prime, factoring p-1 when no factors are given."""
        if factors is None:
            factors = factorint(p - 1).keys()
        distinct = tuple(sorted(set(int(f) for f in factors)))
        u = (p - 1) // 2
        cofactor = u if distinct == tuple(sorted({2, u})) and u > 2 else None
        return cls(p=p, prime_factors_of_group_order=distinct, cofactor_u=cofactor)

    def contains(self, x: int) -> bool:
        return 0 <= x < self.p

    def encode(self, x: FieldElement) -> bytes:
        """Fixed-width big-endian encoding, normative for hashing and the wire."""
        if not self.contains(x):
            raise ValueError(f"{x} is not an element of F_{self.p}")
        return x.to_bytes(self.elem_width_bytes, "big")

    def decode(self, data: bytes) -> FieldElement:
        if len(data) != self.elem_width_bytes:
            raise ValueError(f"expected {self.elem_width_bytes} bytes, got {len(data)}")
        x = int.from_bytes(data, "big")
        if not self.contains(x):
            raise ValueError(f"{x} is not an element of F_{self.p}")
        return x

    def factorisation_reconstructs(self) -> bool:
        """True when p-1 is a product of powers of the listed factors only."""
        rest = self.p - 1
        if rest < 1:
            return False
        for f in self.prime_factors_of_group_order:
            if f < 2 or rest % f != 0:
                return False
            while rest % f == 0:
                rest //= f
        return rest == 1


def mod_pow(base: FieldElement, exp: int, fp: FieldParams) -> FieldElement:
    # pow(0, 0, p) == 1, the empty-factor convention the exponent vectors need.
    if exp < 0:
        raise ValueError("exponent must be non-negative")
    return pow(base, exp, fp.p)


def mod_inv(x: FieldElement, fp: FieldParams) -> FieldElement:
    if x % fp.p == 0:
        raise ZeroInverse(f"0 has no inverse in F_{fp.p}")
    return pow(x, -1, fp.p)


def prod_mod(values: Iterable[FieldElement], fp: FieldParams) -> FieldElement:
    return reduce(lambda acc, v: (acc * v) % fp.p, values, 1)


def is_probable_prime(n: int, rounds: int = MILLER_RABIN_ROUNDS, rng: Optional[random.Random] = None) -> bool:
    """
    Trial division by small primes followed by `rounds` Miller-Rabin witnesses.
    64 rounds bound the error for composites by 4^-64.
    """
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    for f in SMALL_PRIMES:
        if n == f:
            return True
        if n % f == 0:
            return False
    rng = rng or _witness_rng

    r, d = 0, n - 1
    while d % 2 == 0:
        r += 1
        d //= 2

    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def _safe_prime_params(p: int) -> FieldParams:
    u = (p - 1) // 2
    return FieldParams(p=p, prime_factors_of_group_order=tuple(sorted({2, u})), cofactor_u=u)


def generate_safe_prime(bits: int, rng: random.Random, lower_bound: int = 0,
                        max_attempts: Optional[int] = None) -> FieldParams:
    """
    Returns a safe prime p = 2u+1 with exactly `bits` bits and p > lower_bound.

    Raises:
        UsageError: bits < 3.
        ExhaustedAttempts: no candidate found within the budget (10*bits*bits by default).
    """
    if bits < 3:
        raise UsageError(f"safe primes need at least 3 bits, got {bits}")

    if bits <= SMALL_SCAN_BITS:
        lo = max(1 << (bits - 1), lower_bound + 1)
        found = [c for c in range(lo | 1, 1 << bits, 2)
                 if (c - 1) // 2 > 2 and is_probable_prime(c) and is_probable_prime((c - 1) // 2)]
        if not found:
            raise ExhaustedAttempts(f"no {bits}-bit safe prime above {lower_bound}")
        return _safe_prime_params(rng.choice(found))

    budget = max_attempts if max_attempts is not None else 10 * bits * bits
    for attempt in range(budget):
        u = rng.getrandbits(bits - 1) | (1 << (bits - 2)) | 1
        p = 2 * u + 1
        if p <= lower_bound:
            continue
        if any((u % f == 0 and u != f) or p % f == 0 for f in SMALL_PRIMES):
            continue
        if is_probable_prime(u) and is_probable_prime(p):
            logger.debug(f"Found {bits}-bit safe prime after {attempt + 1} candidates")
            return _safe_prime_params(p)
    raise ExhaustedAttempts(f"no {bits}-bit safe prime in {budget} candidates")


def is_generator(g: FieldElement, fp: FieldParams) -> bool:
    if not 0 < g < fp.p:
        return False
    if fp.p == 2:
        return g == 1
    order = fp.p - 1
    return all(pow(g, order // f, fp.p) != 1 for f in fp.prime_factors_of_group_order)


def sample_generator(fp: FieldParams, rng: random.Random,
                     exclude: AbstractSet[FieldElement] = frozenset(),
                     max_attempts: Optional[int] = None) -> FieldElement:
    """Rejection-samples a uniform generator of F_p^x outside `exclude`."""
    budget = max_attempts if max_attempts is not None else 64 * max(fp.p.bit_length(), 8)
    for _ in range(budget):
        g = rng.randrange(1, fp.p)
        if g not in exclude and is_generator(g, fp):
            return g
    raise ExhaustedAttempts(f"no generator of F_{fp.p}^x found in {budget} draws")


def sample_permutation(n: int, rng: random.Random) -> Permutation:
    if n < 1:
        raise UsageError("permutation size must be positive")
    images = list(range(1, n + 1))
    rng.shuffle(images)  # Fisher-Yates
    return tuple(images)


def is_permutation(perm: Tuple[int, ...], n: int) -> bool:
    return len(perm) == n and sorted(perm) == list(range(1, n + 1))
