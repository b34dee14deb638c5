"""Timestamp authority: signed (digest, time) tokens over a pluggable clock.

The canonical signing input is the digest as lowercase hex, a single
newline, then the time in ASCII decimal milliseconds. Tokens issued by one
authority carry strictly non-decreasing times.
"""

from __future__ import annotations

import hashlib
import random
import threading
import time as _time
from dataclasses import dataclass

from . import envelope
from .errors import ClockSkew, FormatError, TamperedToken

DIGEST_BYTES = 32


class VirtualClock:
    """Millisecond counter advanced explicitly by the harness; monotone."""

    def __init__(self, start_ms: int = 0):
        self._now = int(start_ms)

    def now_ms(self) -> int:
        return self._now

    def advance(self, delta_ms: float) -> int:
        if delta_ms < 0:
            raise ClockSkew("virtual clock cannot move backwards")
        self._now += max(0, round(delta_ms))
        return self._now

    def advance_to(self, target_ms: float) -> int:
        self._now = max(self._now, round(target_ms))
        return self._now


class WallClock:
    def now_ms(self) -> int:
        return round(_time.time() * 1000)


def canonical_payload(digest: bytes, time_ms: int) -> bytes:
    return f"{digest.hex()}\n{time_ms}".encode()


@dataclass(frozen=True)
class TimestampToken:
    digest: bytes
    time_ms: int
    signature: bytes
    authority_key_id: str


class TimestampAuthority:
    """Issues and verifies timestamp tokens with one signing key."""

    def __init__(self, clock, rng: random.Random):
        self._clock = clock
        self._secret, self.public_key = envelope.signing_keypair(rng)
        self.key_id = hashlib.sha256(self.public_key).hexdigest()[:16]
        self._lock = threading.Lock()
        self._last_ms = -1

    def stamp(self, digest: bytes) -> TimestampToken:
        if not isinstance(digest, (bytes, bytearray)) or len(digest) != DIGEST_BYTES:
            raise FormatError(f"digest must be exactly {DIGEST_BYTES} bytes")
        digest = bytes(digest)
        with self._lock:
            now = max(self._clock.now_ms(), self._last_ms)
            self._last_ms = now
        signature = envelope.sign(self._secret, canonical_payload(digest, now))
        return TimestampToken(digest, now, signature, self.key_id)

    def verify(self, token: TimestampToken) -> bool:
        if token.authority_key_id != self.key_id:
            return False
        try:
            return envelope.verify(
                self.public_key,
                canonical_payload(token.digest, token.time_ms),
                token.signature,
            )
        except FormatError:
            return False

    def interval(self, start: TimestampToken, end: TimestampToken) -> float:
        """Attested seconds between two tokens of this authority."""
        if not self.verify(start) or not self.verify(end):
            raise TamperedToken("token failed verification")
        if end.time_ms < start.time_ms:
            raise ClockSkew(f"end {end.time_ms} precedes start {start.time_ms}")
        return (end.time_ms - start.time_ms) / 1000.0


def serialize_token(token: TimestampToken) -> str:
    return (
        f"digest: {token.digest.hex()}\n"
        f"time_ms: {token.time_ms}\n"
        f"signature: {token.signature.hex()}\n"
        f"authority_key_id: {token.authority_key_id}\n"
    )


def parse_token(text: str) -> TimestampToken:
    expected = ["digest", "time_ms", "signature", "authority_key_id"]
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != len(expected):
        raise FormatError(f"expected {len(expected)} fields, got {len(lines)}")
    fields = {}
    for line, name in zip(lines, expected):
        key, sep, value = line.partition(":")
        if not sep or key.strip() != name:
            raise FormatError(f"expected field {name!r} in line {line!r}")
        fields[name] = value.strip()
    try:
        return TimestampToken(
            digest=bytes.fromhex(fields["digest"]),
            time_ms=int(fields["time_ms"]),
            signature=bytes.fromhex(fields["signature"]),
            authority_key_id=fields["authority_key_id"],
        )
    except ValueError as e:
        raise FormatError(str(e)) from e
