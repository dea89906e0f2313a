"""
params.py

Public protocol parameters agreed before round 1: the dimension n, the field
F_p, the matrix C, the message length q and the h1/h2 instantiations.

Parameters are generated with `setup`, checked with `validate` (which reports
every violation rather than raising), and exchanged as a canonical JSON
document in which all integers are decimal strings.
"""
from __future__ import annotations
import hashlib
import json
import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from errors import ExhaustedAttempts, InvalidOverride, ParseError, UsageError
from field_core import (
    SMALL_SCAN_BITS, FieldElement, FieldParams, generate_safe_prime, is_probable_prime,
)
from hashing import (
    DEFAULT_DOMAIN_TAG, DEFAULT_H1_ALGORITHM, H2_DISCRETE_EXP, H2_TOY_IDENTITY,
    H1Spec, H2Spec, h1_problems, h2_problems, make_h2_spec,
)

logger = logging.getLogger("Params")

FORMAT_VERSION = "1"
DEFAULT_Q = 128
MIN_Q = 8

Matrix = Tuple[Tuple[FieldElement, ...], ...]


@dataclass(frozen=True)
class ProtocolParams:
    n: int
    fp: FieldParams
    C: Matrix
    q: int
    h1_spec: H1Spec
    h2_spec: H2Spec

    @property
    def p(self) -> int:
        return self.fp.p

    @property
    def qprime(self) -> int:
        return self.h2_spec.qprime


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def field_bit_length(n: int) -> int:
    """max(ceil(sqrt(n log2 n)), ceil(log2(n^2+3)), 3)."""
    size_term = math.ceil(math.sqrt(n * math.log2(n)))
    floor_term = (n * n + 2).bit_length()  # == ceil(log2(n^2 + 3))
    return max(size_term, floor_term, 3)


def prime_floor(n: int) -> int:
    """p must exceed n^2 + 2 so that a, b avoiding every -c_{i,j} always exist."""
    return n * n + 2


def setup(n: int, rng: random.Random, p: Optional[int] = None, q: Optional[int] = None,
          p_factors: Optional[Sequence[int]] = None, h2_spec: Optional[H2Spec] = None,
          h2_variant: str = H2_DISCRETE_EXP, domain_tag: bytes = DEFAULT_DOMAIN_TAG,
          test_mode: bool = False) -> ProtocolParams:
    """
    Generates fresh public parameters for dimension n.

    Args:
        n: Vector dimension, at least 2.
        rng: Random source for p, C and the h2 group.
        p: Explicit prime overriding generation; p-1 is factored with sympy unless p_factors is given.
        q: Message length in bits (default 128).
        h2_spec: A prepared h2 instantiation to reuse instead of generating one.
        test_mode: Permits the toy_identity h2.

    Raises:
        UsageError: n < 2.
        InvalidOverride: An override violates the parameter invariants.
        ExhaustedAttempts: Prime generation failed.
    """
    if n < 2:
        raise UsageError(f"n must be at least 2, got {n}")
    q = DEFAULT_Q if q is None else q
    if not MIN_Q <= q <= 256:
        raise InvalidOverride(f"q = {q} outside [{MIN_Q}, 256]")

    if p is not None:
        if not is_probable_prime(p):
            raise InvalidOverride(f"p = {p} is not prime")
        if p <= prime_floor(n):
            raise InvalidOverride(f"p = {p} must exceed n^2 + 2 = {prime_floor(n)}")
        fp = FieldParams.from_prime(p, p_factors)
        if not fp.factorisation_reconstructs():
            raise InvalidOverride(f"given factors do not reconstruct p - 1 = {p - 1}")
    else:
        bits = field_bit_length(n)
        while True:
            try:
                fp = generate_safe_prime(bits, rng, lower_bound=prime_floor(n))
                break
            except ExhaustedAttempts:
                if bits > SMALL_SCAN_BITS:
                    raise
                logger.debug(f"No {bits}-bit safe prime above {prime_floor(n)}, widening")
                bits += 1

    C = tuple(tuple(rng.randrange(fp.p) for _ in range(n)) for _ in range(n))

    if h2_spec is None:
        if h2_variant == H2_TOY_IDENTITY and not test_mode:
            raise InvalidOverride("toy_identity h2 is only allowed in test mode")
        h2_spec = make_h2_spec(q, rng, h2_variant)
    elif h2_spec.q != q:
        raise InvalidOverride(f"h2 spec is for q = {h2_spec.q}, not {q}")

    params = ProtocolParams(
        n=n, fp=fp, C=C, q=q,
        h1_spec=H1Spec(algorithm=DEFAULT_H1_ALGORITHM, q=q, domain_tag=domain_tag),
        h2_spec=h2_spec,
    )
    logger.info(f"Parameters ready: n={n}, p={fp.p} ({fp.p.bit_length()} bits), q={q}")
    return params


def validate(params: ProtocolParams, test_mode: bool = False) -> List[Violation]:
    """Checks every parameter invariant and returns all violations found (empty when valid)."""
    violations: List[Violation] = []
    n, fp = params.n, params.fp

    if n < 2:
        violations.append(Violation("DimensionTooSmall", f"n = {n} < 2"))
    if len(params.C) != n or any(len(row) != n for row in params.C):
        widths = sorted({len(row) for row in params.C})
        violations.append(Violation("ShapeMismatch", f"C has {len(params.C)} rows of widths {widths}, expected {n}x{n}"))
    if any(not fp.contains(c) for row in params.C for c in row):
        violations.append(Violation("EntryOutOfRange", f"C has entries outside [0, {fp.p - 1}]"))
    if not is_probable_prime(fp.p):
        violations.append(Violation("PrimalityFailure", f"p = {fp.p} is not prime"))
    elif not fp.factorisation_reconstructs():
        violations.append(Violation("FactorMismatch", "listed factors do not reconstruct p - 1"))
    if fp.p <= prime_floor(n):
        violations.append(Violation("PrimeTooSmall", f"p = {fp.p} must exceed n^2 + 2 = {prime_floor(n)}"))
    if not MIN_Q <= params.q <= 256:
        violations.append(Violation("QOutOfRange", f"q = {params.q} outside [{MIN_Q}, 256]"))

    h1_issues = h1_problems(params.h1_spec)
    if params.h1_spec.q != params.q:
        h1_issues.append(f"h1 output length {params.h1_spec.q} differs from q = {params.q}")
    violations.extend(Violation("H1Inconsistent", msg) for msg in h1_issues)
    violations.extend(Violation("H2Inconsistent", msg) for msg in h2_problems(params.h2_spec, params.q))
    if params.h2_spec.variant == H2_TOY_IDENTITY and not test_mode:
        violations.append(Violation("ToyHashOutsideTestMode", "toy_identity h2 is not one-way"))
    return violations


# --- Parameter file ---

def _params_to_doc(params: ProtocolParams) -> Dict[str, Any]:
    h2 = params.h2_spec
    h2_doc: Dict[str, Any] = {"variant": h2.variant, "q": str(h2.q), "qprime": str(h2.qprime)}
    if h2.variant == H2_DISCRETE_EXP:
        h2_doc.update({
            "P": str(h2.modulus),
            "G": str(h2.generator),
            "factors_of_P_minus_1": [str(f) for f in h2.modulus_factors],
        })
    return {
        "version": FORMAT_VERSION,
        "n": str(params.n),
        "p": str(params.fp.p),
        "factors_of_p_minus_1": [str(f) for f in params.fp.prime_factors_of_group_order],
        "C": [str(c) for row in params.C for c in row],
        "q": str(params.q),
        "h1": {
            "algorithm": params.h1_spec.algorithm,
            "q": str(params.h1_spec.q),
            "domain_tag": params.h1_spec.domain_tag.decode("utf-8"),
        },
        "h2": h2_doc,
    }


def save_params(params: ProtocolParams) -> bytes:
    """Canonical UTF-8 JSON: sorted keys, fixed indentation, trailing newline."""
    return (json.dumps(_params_to_doc(params), sort_keys=True, indent=2) + "\n").encode("utf-8")


def _field(doc: Dict[str, Any], key: str, path: str) -> Any:
    if not isinstance(doc, dict):
        raise ParseError("expected an object", path=path)
    if key not in doc:
        raise ParseError(f"missing field '{key}'", path=f"{path}.{key}")
    return doc[key]


def _int(doc: Dict[str, Any], key: str, path: str) -> int:
    raw = _field(doc, key, path)
    return _parse_decimal(raw, f"{path}.{key}")


def _parse_decimal(raw: Any, path: str) -> int:
    if not isinstance(raw, str) or not (raw.isascii() and raw.isdigit()):
        raise ParseError(f"expected a decimal string, got {raw!r}", path=path)
    return int(raw)


def _int_list(doc: Dict[str, Any], key: str, path: str) -> List[int]:
    raw = _field(doc, key, path)
    if not isinstance(raw, list):
        raise ParseError("expected an array", path=f"{path}.{key}")
    return [_parse_decimal(v, f"{path}.{key}[{i}]") for i, v in enumerate(raw)]


def load_params(data: Union[bytes, str]) -> ProtocolParams:
    """
    Parses a parameter document. Structure is checked here; mathematical
    invariants are left to `validate`.

    Raises:
        ParseError: Malformed JSON (with character position) or a missing/ill-typed field (with key path).
    """
    try:
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    except UnicodeDecodeError as e:
        raise ParseError("parameter file is not UTF-8", position=e.start) from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, position=e.pos) from e
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", position=0)

    version = _field(doc, "version", "$")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version!r}", path="$.version")

    n = _int(doc, "n", "$")
    p = _int(doc, "p", "$")
    factors = _int_list(doc, "factors_of_p_minus_1", "$")
    flat = _int_list(doc, "C", "$")
    if n == 0 or len(flat) % n != 0:
        raise ParseError(f"C has {len(flat)} entries, not a multiple of n = {n}", path="$.C")
    C = tuple(tuple(flat[i:i + n]) for i in range(0, len(flat), n))
    q = _int(doc, "q", "$")

    h1_doc = _field(doc, "h1", "$")
    algorithm = _field(h1_doc, "algorithm", "$.h1")
    tag = _field(h1_doc, "domain_tag", "$.h1")
    if not isinstance(algorithm, str) or not isinstance(tag, str):
        raise ParseError("h1 algorithm and domain_tag must be strings", path="$.h1")
    h1_spec = H1Spec(algorithm=algorithm, q=_int(h1_doc, "q", "$.h1"), domain_tag=tag.encode("utf-8"))

    h2_doc = _field(doc, "h2", "$")
    variant = _field(h2_doc, "variant", "$.h2")
    if variant == H2_DISCRETE_EXP:
        h2_spec = H2Spec(
            variant=variant, q=_int(h2_doc, "q", "$.h2"), qprime=_int(h2_doc, "qprime", "$.h2"),
            modulus=_int(h2_doc, "P", "$.h2"), generator=_int(h2_doc, "G", "$.h2"),
            modulus_factors=tuple(_int_list(h2_doc, "factors_of_P_minus_1", "$.h2")),
        )
    elif variant == H2_TOY_IDENTITY:
        h2_spec = H2Spec(variant=variant, q=_int(h2_doc, "q", "$.h2"), qprime=_int(h2_doc, "qprime", "$.h2"))
    else:
        raise ParseError(f"unknown h2 variant {variant!r}", path="$.h2.variant")

    return ProtocolParams(n=n, fp=FieldParams.from_prime(p, factors), C=C, q=q,
                          h1_spec=h1_spec, h2_spec=h2_spec)


def params_digest(params: ProtocolParams) -> bytes:
    """8-byte fingerprint of the canonical parameter file, exchanged in the hello frame."""
    return hashlib.sha256(save_params(params)).digest()[:8]


def write_params_file(path: Path, params: ProtocolParams) -> None:
    Path(path).write_bytes(save_params(params))
    logger.info(f"Parameters written to {path}")


def read_params_file(path: Path) -> ProtocolParams:
    return load_params(Path(path).read_bytes())
