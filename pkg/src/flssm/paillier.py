"""Exact additive homomorphic encryption over big integers.

The scheme is the classic factoring-based one with g = n + 1: ciphertexts
live in Z*_{n^2}, addition of plaintexts is multiplication of ciphertexts,
and multiplication by a plaintext constant is exponentiation.  Real-valued
vectors are carried through a fixed-point codec; negative values occupy the
upper half of the plaintext space.

Decryption with the wrong key returns garbage without any error — there is
no integrity tag at this layer.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EncodingOverflow,
    FormatError,
    ParameterError,
    ShapeMismatch,
    ShardSetIncomplete,
)

DEFAULT_SCALE = 2 ** 16
# Precision at which non-integer plain factors are quantized; see scale_plain.
FACTOR_SCALE = 2 ** 32

_SMALL_PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53]


def _is_probable_prime(m: int) -> bool:
    """Miller-Rabin with witnesses derived deterministically from m."""
    if m < 2:
        return False
    for p in _SMALL_PRIMES:
        if m % p == 0:
            return m == p
    d = m - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    # Deterministic bases are exact below 3.3e24; above that, witnesses come
    # from an rng seeded by the candidate itself so keygen stays reproducible.
    if m < 3317044064679887385961981:
        witnesses: Iterable[int] = _SMALL_PRIMES[:13]
    else:
        wrng = random.Random(m)
        witnesses = [wrng.randrange(2, m - 1) for _ in range(40)]
    for a in witnesses:
        a %= m
        if a < 2:
            continue
        x = pow(a, d, m)
        if x == 1 or x == m - 1:
            continue
        for _ in range(r - 1):
            x = x * x % m
            if x == m - 1:
                break
        else:
            return False
    return True


def _gen_prime(bits: int, rng: random.Random) -> int:
    while True:
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if _is_probable_prime(candidate):
            return candidate


@dataclass(frozen=True)
class HePublicKey:
    """Public key (n, g) with g = n + 1."""

    n: int
    g: int
    key_bits: int

    @property
    def n_sq(self) -> int:
        return self.n * self.n


@dataclass(frozen=True)
class HeSecretKey:
    """Secret key: decryption exponent lam = phi(n) and mu = lam^-1 mod n."""

    lam: int
    n: int
    mu: int


@dataclass(frozen=True)
class NullPublicKey:
    """Debug backend: 'encryption' is the identity on plaintext residues."""

    n: int
    key_bits: int


@dataclass(frozen=True)
class NullSecretKey:
    n: int


def keygen(key_bits: int, seed: int) -> tuple[HePublicKey, HeSecretKey]:
    """Deterministically generate a key pair of exactly key_bits modulus bits.

    key_bits must be even and at least 64 (desk-scale test sizes; pick
    2048+ for anything security-relevant).
    """
    if key_bits < 64 or key_bits % 2 != 0:
        raise ParameterError(f"key_bits must be even and >= 64, got {key_bits}")
    rng = random.Random(seed)
    while True:
        p = _gen_prime(key_bits // 2, rng)
        q = _gen_prime(key_bits // 2, rng)
        n = p * q
        if p != q and n.bit_length() == key_bits:
            break
    lam = (p - 1) * (q - 1)
    mu = pow(lam, -1, n)
    return HePublicKey(n=n, g=n + 1, key_bits=key_bits), HeSecretKey(lam=lam, n=n, mu=mu)


def null_keygen(key_bits: int = 128) -> tuple[NullPublicKey, NullSecretKey]:
    n = 1 << key_bits
    return NullPublicKey(n=n, key_bits=key_bits), NullSecretKey(n=n)


@dataclass(frozen=True)
class FixedPointCodec:
    """Maps real vectors to integers via round(value * scale).

    Negative values wrap to the upper half of [0, modulus); anything at or
    beyond modulus/2 in magnitude overflows.
    """

    scale: int = DEFAULT_SCALE
    modulus: int = 0

    def __post_init__(self):
        if self.scale <= 0 or self.scale & (self.scale - 1):
            raise ParameterError("scale must be a positive power of two")
        if self.modulus < 2:
            raise ParameterError("modulus must be >= 2")

    def encode(self, values: Sequence[float]) -> list[int]:
        out = []
        half = self.modulus // 2
        for v in values:
            m = round(abs(float(v)) * self.scale)
            if m > half:
                raise EncodingOverflow(f"|{v}| * {self.scale} exceeds half the plaintext space")
            out.append(m if v >= 0 else (self.modulus - m) % self.modulus)
        return out

    def decode(self, plaintexts: Sequence[int], scale: int | None = None) -> np.ndarray:
        """Decode field elements back to reals; upper half decodes negative."""
        s = self.scale if scale is None else scale
        half = self.modulus // 2
        return np.array(
            [(m if m <= half else m - self.modulus) / s for m in plaintexts],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class CipherVector:
    """A vector of ciphertexts under one key, tagged with its shard index.

    `scale` is the cumulative fixed-point scale of the underlying values
    (fresh encryptions carry the codec scale; plaintext multiplications
    accumulate the factor's quantization scale).  `op_modulus` is n^2 for
    the real backend and n for the null backend.
    """

    elements: tuple[int, ...]
    shard_index: int
    scale: int
    op_modulus: int
    mode: str = "paillier"

    @property
    def logical_length(self) -> int:
        return len(self.elements)


def encrypt(pk, plaintext: Sequence[int], shard_index: int, rng: random.Random,
            scale: int = 1) -> CipherVector:
    """Encrypt a vector of plaintext residues (already fixed-point encoded)."""
    n = pk.n
    for m in plaintext:
        if not 0 <= m < n:
            raise EncodingOverflow(f"plaintext {m} outside [0, {n})")
    if isinstance(pk, NullPublicKey):
        return CipherVector(tuple(int(m) for m in plaintext), shard_index, scale, n, "null")
    n_sq = pk.n_sq
    elements = []
    for m in plaintext:
        while True:
            r = rng.randrange(1, n)
            if math.gcd(r, n) == 1:
                break
        elements.append((1 + n * m) % n_sq * pow(r, n, n_sq) % n_sq)
    return CipherVector(tuple(elements), shard_index, scale, n_sq)


def decrypt(sk, c: CipherVector) -> list[int]:
    """Recover the plaintext residues. Wrong-key decryption is undetected."""
    if c.mode == "null":
        return list(c.elements)
    n, lam, mu = sk.n, sk.lam, sk.mu
    n_sq = n * n
    for x in c.elements:
        if not 0 <= x < n_sq:
            raise FormatError("ciphertext element outside the ciphertext space")
    return [(pow(x, lam, n_sq) - 1) // n * mu % n for x in c.elements]


def add(a: CipherVector, b: CipherVector) -> CipherVector:
    """Homomorphic element-wise addition of the underlying plaintexts."""
    if (a.op_modulus != b.op_modulus or a.mode != b.mode
            or a.shard_index != b.shard_index
            or a.logical_length != b.logical_length or a.scale != b.scale):
        raise ShapeMismatch("operands differ in key, shard, length, or scale")
    if a.mode == "null":
        elements = tuple((x + y) % a.op_modulus for x, y in zip(a.elements, b.elements))
    else:
        elements = tuple(x * y % a.op_modulus for x, y in zip(a.elements, b.elements))
    return CipherVector(elements, a.shard_index, a.scale, a.op_modulus, a.mode)


def _quantize_factor(factor) -> tuple[int, int]:
    """Return (k, extra_scale) with k/extra_scale ~= factor.

    Exact integers multiply directly (extra_scale 1); everything else is
    quantized at FACTOR_SCALE, which the ciphertext scale absorbs so that
    decoding stays within 1/(2*scale) of the true product.
    """
    f = Fraction(factor)
    if f.denominator == 1:
        return int(f), 1
    k = round(f * FACTOR_SCALE)
    if k == 0:
        raise EncodingOverflow(f"factor {factor} underflows the factor scale")
    return int(k), FACTOR_SCALE


def scale_plain(a: CipherVector, factor) -> CipherVector:
    """Multiply the underlying plaintext vector by a plain rational factor."""
    k, extra = _quantize_factor(factor)
    if a.mode == "null":
        n = a.op_modulus
        elements = tuple(x * k % n for x in a.elements)
        return CipherVector(elements, a.shard_index, a.scale * extra, n, "null")
    n_sq = a.op_modulus
    n = math.isqrt(n_sq)
    exponent = k % n
    elements = tuple(pow(x, exponent, n_sq) for x in a.elements)
    return CipherVector(elements, a.shard_index, a.scale * extra, n_sq)


def concat(shards: Iterable[CipherVector]) -> list[CipherVector]:
    """Order shards ascending by shard index, requiring exactly {1..count}."""
    shards = list(shards)
    indices = sorted(s.shard_index for s in shards)
    if indices != list(range(1, len(shards) + 1)):
        raise ShardSetIncomplete(f"shard indices {indices} are not 1..{len(shards)}")
    return sorted(shards, key=lambda s: s.shard_index)


# --- canonical serialization -------------------------------------------------
#
# Structured text, one "name: value" line per field, fixed field order, big
# integers as lowercase hex without leading zeros.

def _hex(x: int) -> str:
    return format(x, "x")


def _parse_fields(text: str, expected: Sequence[str]) -> dict[str, str]:
    fields = {}
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != len(expected):
        raise FormatError(f"expected {len(expected)} fields, got {len(lines)}")
    for line, name in zip(lines, expected):
        key, sep, value = line.partition(":")
        if not sep or key.strip() != name:
            raise FormatError(f"expected field {name!r} in line {line!r}")
        fields[name] = value.strip()
    return fields


def serialize_public_key(pk: HePublicKey) -> str:
    return f"n: {_hex(pk.n)}\ng: {_hex(pk.g)}\nkey_bits: {pk.key_bits}\n"


def parse_public_key(text: str) -> HePublicKey:
    f = _parse_fields(text, ["n", "g", "key_bits"])
    try:
        return HePublicKey(n=int(f["n"], 16), g=int(f["g"], 16), key_bits=int(f["key_bits"]))
    except ValueError as e:
        raise FormatError(str(e)) from e


def serialize_secret_key(sk: HeSecretKey) -> str:
    return f"lam: {_hex(sk.lam)}\nn: {_hex(sk.n)}\nmu: {_hex(sk.mu)}\n"


def parse_secret_key(text: str) -> HeSecretKey:
    f = _parse_fields(text, ["lam", "n", "mu"])
    try:
        return HeSecretKey(lam=int(f["lam"], 16), n=int(f["n"], 16), mu=int(f["mu"], 16))
    except ValueError as e:
        raise FormatError(str(e)) from e


def serialize_cipher_vector(c: CipherVector) -> str:
    return (
        f"elements: {','.join(_hex(x) for x in c.elements)}\n"
        f"shard_index: {c.shard_index}\n"
        f"logical_length: {c.logical_length}\n"
        f"scale: {_hex(c.scale)}\n"
    )


def parse_cipher_vector(text: str, pk) -> CipherVector:
    f = _parse_fields(text, ["elements", "shard_index", "logical_length", "scale"])
    try:
        elements = tuple(int(x, 16) for x in f["elements"].split(",")) if f["elements"] else ()
        length = int(f["logical_length"])
        c = CipherVector(
            elements=elements,
            shard_index=int(f["shard_index"]),
            scale=int(f["scale"], 16),
            op_modulus=pk.n if isinstance(pk, NullPublicKey) else pk.n_sq,
            mode="null" if isinstance(pk, NullPublicKey) else "paillier",
        )
    except ValueError as e:
        raise FormatError(str(e)) from e
    if length != c.logical_length:
        raise FormatError("logical_length disagrees with element count")
    return c
