"""Threshold secret sharing over a prime field with Lagrange reconstruction.

Secrets wider than the field (serialized decryption keys) are split
limb-wise: the byte string is chunked, each chunk shared independently
under the same (t, n), and reassembled in order on reconstruction.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import DuplicateShare, FieldOverflow, FormatError, ParameterError, ThresholdNotMet

# Largest 256-bit prime; leaves ample headroom over 31-byte limbs.
DEFAULT_PRIME = 2 ** 256 - 189
LIMB_BYTES = 31


@dataclass(frozen=True)
class FieldParams:
    prime: int
    threshold: int
    share_count: int

    def __post_init__(self):
        if self.threshold < 1 or self.share_count < 1:
            raise ParameterError("threshold and share_count must be positive")
        if self.threshold > self.share_count:
            raise ParameterError(
                f"threshold {self.threshold} exceeds share count {self.share_count}"
            )
        if self.prime <= self.share_count:
            raise ParameterError("prime must exceed the number of evaluation points")


@dataclass(frozen=True)
class SecretShare:
    x: int
    y: int
    share_index: int
    key_owner: str = ""
    limb_index: int = 0


def _eval_poly(coefficients: list[int], x: int, p: int) -> int:
    acc = 0
    for c in reversed(coefficients):
        acc = (acc * x + c) % p
    return acc


def split(secret: int, params: FieldParams, rng: random.Random,
          key_owner: str = "", limb_index: int = 0) -> list[SecretShare]:
    """Share a field element as evaluations of a random degree-(t-1) polynomial.

    Evaluation points are fixed at x = 1..n, so a seeded rng fully
    determines the share set.
    """
    p = params.prime
    if not 0 <= secret < p:
        raise FieldOverflow(f"secret must lie in [0, {p})")
    coefficients = [secret] + [rng.randrange(p) for _ in range(params.threshold - 1)]
    return [
        SecretShare(x=i, y=_eval_poly(coefficients, i, p),
                    share_index=i, key_owner=key_owner, limb_index=limb_index)
        for i in range(1, params.share_count + 1)
    ]


def reconstruct(shares: list[SecretShare], params: FieldParams) -> int:
    """Lagrange-interpolate f(0) from at least t shares with distinct x."""
    if len(shares) < params.threshold:
        raise ThresholdNotMet(
            f"need {params.threshold} shares, got {len(shares)}"
        )
    xs = [s.x for s in shares]
    if len(set(xs)) != len(xs):
        raise DuplicateShare("shares contain repeated evaluation points")
    p = params.prime
    secret = 0
    for i, share in enumerate(shares):
        num = 1
        den = 1
        for j, other in enumerate(shares):
            if i == j:
                continue
            num = num * (-other.x) % p
            den = den * (share.x - other.x) % p
        secret = (secret + share.y * num * pow(den, -1, p)) % p
    return secret


def split_bytes(secret: bytes, params: FieldParams, rng: random.Random,
                key_owner: str = "") -> list[list[SecretShare]]:
    """Chunk a byte string into limbs below the field prime and share each."""
    if params.prime.bit_length() <= LIMB_BYTES * 8:
        raise ParameterError("prime too small for the fixed limb width")
    limbs = [secret[i:i + LIMB_BYTES] for i in range(0, len(secret), LIMB_BYTES)]
    return [
        split(int.from_bytes(chunk, "big"), params, rng,
              key_owner=key_owner, limb_index=idx)
        for idx, chunk in enumerate(limbs)
    ]


def reconstruct_bytes(limb_shares: list[list[SecretShare]], params: FieldParams,
                      byte_length: int) -> bytes:
    """Inverse of split_bytes given the original byte length."""
    out = bytearray()
    for idx, shares in enumerate(limb_shares):
        value = reconstruct(shares, params)
        is_last = idx == len(limb_shares) - 1
        width = byte_length - idx * LIMB_BYTES if is_last else LIMB_BYTES
        out += value.to_bytes(width, "big")
    if len(out) != byte_length:
        raise FormatError(f"reassembled {len(out)} bytes, expected {byte_length}")
    return bytes(out)


def serialize_share(share: SecretShare, params: FieldParams) -> str:
    return (
        f"p: {format(params.prime, 'x')}\n"
        f"t: {params.threshold}\n"
        f"n: {params.share_count}\n"
        f"share_index: {share.share_index}\n"
        f"x: {format(share.x, 'x')}\n"
        f"y: {format(share.y, 'x')}\n"
        f"key_owner: {share.key_owner}\n"
        f"limb_index: {share.limb_index}\n"
    )


def parse_share(text: str) -> tuple[SecretShare, FieldParams]:
    expected = ["p", "t", "n", "share_index", "x", "y", "key_owner", "limb_index"]
    fields = {}
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != len(expected):
        raise FormatError(f"expected {len(expected)} fields, got {len(lines)}")
    for line, name in zip(lines, expected):
        key, sep, value = line.partition(":")
        if not sep or key.strip() != name:
            raise FormatError(f"expected field {name!r} in line {line!r}")
        fields[name] = value.strip()
    try:
        params = FieldParams(prime=int(fields["p"], 16), threshold=int(fields["t"]),
                             share_count=int(fields["n"]))
        share = SecretShare(x=int(fields["x"], 16), y=int(fields["y"], 16),
                            share_index=int(fields["share_index"]),
                            key_owner=fields["key_owner"],
                            limb_index=int(fields["limb_index"]))
    except ValueError as e:
        raise FormatError(str(e)) from e
    return share, params
