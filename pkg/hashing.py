"""
hashing.py

The two public functions both parties agree on before round 1:

    h1 : F_p -> {0,1}^q       a standard 256-bit hash, domain tagged and truncated
    h2 : {0,1}^q -> {0,1}^q'  injective one-way map, G^(M+1) mod P by default

plus the XOR masking used in round 3 and the `BitString` value type that
carries q- and q'-bit strings.
"""
from __future__ import annotations
import hashlib
import logging
import random
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from errors import LengthMismatch
from field_core import (
    FieldElement, FieldParams, generate_safe_prime, is_generator,
    is_probable_prime, sample_generator,
)

logger = logging.getLogger("Hashing")

DEFAULT_H1_ALGORITHM = "sha256"
DEFAULT_DOMAIN_TAG = b"OT12.h1.v1"

H2_DISCRETE_EXP = "discrete_exp"
H2_TOY_IDENTITY = "toy_identity"
H2_VARIANTS = (H2_DISCRETE_EXP, H2_TOY_IDENTITY)


@dataclass(frozen=True)
class BitString:
    """A bit string of exactly `length` bits, stored as its big-endian integer value."""
    value: int
    length: int

    def __post_init__(self):
        if self.length < 0 or not 0 <= self.value < (1 << self.length):
            raise LengthMismatch(f"value does not fit in {self.length} bits")

    @property
    def byte_length(self) -> int:
        return (self.length + 7) // 8

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(self.byte_length, "big")

    @classmethod
    def from_bytes(cls, data: bytes, length: int) -> BitString:
        if len(data) != (length + 7) // 8:
            raise LengthMismatch(f"{len(data)} bytes cannot hold exactly {length} bits")
        return cls(int.from_bytes(data, "big"), length)

    @classmethod
    def from_bits(cls, bits: str) -> BitString:
        """'1010' -> BitString(10, 4)."""
        return cls(int(bits, 2) if bits else 0, len(bits))

    @classmethod
    def from_hex(cls, text: str, length: int) -> BitString:
        if len(text) * 4 != length:
            raise LengthMismatch(f"expected {length // 4} hex digits, got {len(text)}")
        return cls(int(text, 16), length)

    @classmethod
    def random(cls, length: int, rng: random.Random) -> BitString:
        return cls(rng.getrandbits(length) if length else 0, length)

    def hex(self) -> str:
        return self.to_bytes().hex()

    def bits(self) -> str:
        return format(self.value, f"0{self.length}b") if self.length else ""

    def __xor__(self, other: BitString) -> BitString:
        return xor_mask(self, other)


@dataclass
class OpCounters:
    """Invocation counts of h1 and h2, the cost units of the protocol."""
    h1_calls: int = 0
    h2_calls: int = 0

    def merged(self, other: OpCounters) -> OpCounters:
        return OpCounters(self.h1_calls + other.h1_calls, self.h2_calls + other.h2_calls)


@dataclass(frozen=True)
class H1Spec:
    algorithm: str = DEFAULT_H1_ALGORITHM
    q: int = 128
    domain_tag: bytes = DEFAULT_DOMAIN_TAG

    @property
    def native_bits(self) -> int:
        return hashlib.new(self.algorithm).digest_size * 8


@dataclass(frozen=True)
class H2Spec:
    """
    discrete_exp: h2(m) = G^(M+1) mod P, written in qprime bits.
    toy_identity: h2(m) = m. Not one-way; only accepted in test mode.
    """
    variant: str = H2_DISCRETE_EXP
    q: int = 128
    qprime: int = 128
    modulus: Optional[int] = None
    generator: Optional[int] = None
    modulus_factors: Tuple[int, ...] = field(default_factory=tuple)

    @property
    def group(self) -> FieldParams:
        return FieldParams(p=self.modulus, prime_factors_of_group_order=self.modulus_factors)


def h1(x: FieldElement, spec: H1Spec, fp: FieldParams, counters: Optional[OpCounters] = None) -> BitString:
    """hash(domain_tag || fixed-width encoding of x), truncated to the first q bits."""
    digest = hashlib.new(spec.algorithm, spec.domain_tag + fp.encode(x)).digest()
    if counters is not None:
        counters.h1_calls += 1
    return BitString(int.from_bytes(digest, "big") >> (len(digest) * 8 - spec.q), spec.q)


def h2(m: BitString, spec: H2Spec, counters: Optional[OpCounters] = None) -> BitString:
    if m.length != spec.q:
        raise LengthMismatch(f"h2 expects {spec.q} bits, got {m.length}")
    if counters is not None:
        counters.h2_calls += 1
    if spec.variant == H2_TOY_IDENTITY:
        return m
    # Exponents M+1 lie in [1, 2^q] and 2^q < P-1, so distinct messages never collide.
    return BitString(pow(spec.generator, m.value + 1, spec.modulus), spec.qprime)


def xor_mask(x: BitString, y: BitString) -> BitString:
    if x.length != y.length:
        raise LengthMismatch(f"cannot XOR {x.length}-bit and {y.length}-bit strings")
    return BitString(x.value ^ y.value, x.length)


def make_h2_spec(q: int, rng: random.Random, variant: str = H2_DISCRETE_EXP) -> H2Spec:
    """Builds h2 parameters for q-bit messages; discrete_exp uses a fresh (q+2)-bit safe prime."""
    if variant == H2_TOY_IDENTITY:
        return H2Spec(variant=variant, q=q, qprime=q)
    if variant != H2_DISCRETE_EXP:
        raise ValueError(f"unknown h2 variant '{variant}'")
    group = generate_safe_prime(q + 2, rng)
    g = sample_generator(group, rng)
    qprime = 8 * ((group.p.bit_length() + 7) // 8)
    logger.info(f"h2 group: {group.p.bit_length()}-bit safe prime, q' = {qprime}")
    return H2Spec(variant=variant, q=q, qprime=qprime, modulus=group.p, generator=g,
                  modulus_factors=group.prime_factors_of_group_order)


def h1_problems(spec: H1Spec) -> List[str]:
    problems = []
    try:
        native = spec.native_bits
    except ValueError:
        return [f"unknown hash algorithm '{spec.algorithm}'"]
    if native != 256:
        problems.append(f"h1 must be a 256-bit hash, '{spec.algorithm}' gives {native}")
    if not 1 <= spec.q <= native:
        problems.append(f"h1 output length {spec.q} outside [1, {native}]")
    if not spec.domain_tag:
        problems.append("h1 domain tag is empty")
    return problems


def h2_problems(spec: H2Spec, q: int) -> List[str]:
    problems = []
    if spec.q != q:
        problems.append(f"h2 input length {spec.q} differs from q = {q}")
    if spec.variant == H2_TOY_IDENTITY:
        if spec.qprime != spec.q:
            problems.append("toy_identity requires q' = q")
        return problems
    if spec.variant != H2_DISCRETE_EXP:
        return problems + [f"unknown h2 variant '{spec.variant}'"]
    if spec.modulus is None or spec.generator is None:
        return problems + ["discrete_exp requires a modulus P and a generator G"]
    P = spec.modulus
    if not is_probable_prime(P):
        problems.append("h2 modulus P is not prime")
    if P.bit_length() < spec.q + 2 or (1 << spec.q) >= P - 1:
        problems.append(f"h2 modulus P too small for q = {spec.q}")
    if not spec.group.factorisation_reconstructs():
        problems.append("h2 factors do not reconstruct P-1")
    elif not is_generator(spec.generator, spec.group):
        problems.append("h2 G is not a generator modulo P")
    if spec.qprime != 8 * ((P.bit_length() + 7) // 8):
        problems.append(f"h2 output length q' = {spec.qprime} does not match P")
    return problems
