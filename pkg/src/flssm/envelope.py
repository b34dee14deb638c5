"""Policy-gated envelope encryption and the signature primitive.

Stands in for attribute-based encryption: a payload is sealed to every
authority-certified node whose attributes satisfy a conjunctive policy.
The policy travels in cleartext next to the ciphertext and is re-checked
at open time, so possession of a wrapped key is never enough on its own.

Primitives: Ed25519 signatures (deterministic), X25519 + HKDF-SHA256 +
AES-256-GCM for the hybrid seal. All key material is derived from explicit
rng handles so seeded runs reproduce byte-identically.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Mapping

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import (
    AuthFailure,
    CredentialInvalid,
    FormatError,
    NoEligibleRecipient,
    ParameterError,
    PolicyUnsatisfied,
)

SIGNATURE_SCHEME = "ed25519"
HASH_SCHEME = "sha256"


def signing_keypair(rng: random.Random) -> tuple[bytes, bytes]:
    """Return (secret, public) raw Ed25519 key bytes from an explicit rng."""
    secret = rng.randbytes(32)
    public = (
        Ed25519PrivateKey.from_private_bytes(secret)
        .public_key()
        .public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    )
    return secret, public


def encryption_keypair(rng: random.Random) -> tuple[bytes, bytes]:
    """Return (secret, public) raw X25519 key bytes from an explicit rng."""
    secret = rng.randbytes(32)
    public = (
        X25519PrivateKey.from_private_bytes(secret)
        .public_key()
        .public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    )
    return secret, public


def sign(secret: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(secret).sign(message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    if not isinstance(signature, (bytes, bytearray)) or len(signature) != 64:
        raise FormatError("signature must be 64 raw bytes")
    try:
        Ed25519PublicKey.from_public_bytes(bytes(public)).verify(bytes(signature), message)
        return True
    except InvalidSignature:
        return False


@dataclass(frozen=True)
class Policy:
    """Conjunction of required attribute pairs."""

    required: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.required:
            raise ParameterError("policy must require at least one attribute")

    @classmethod
    def of(cls, **attributes: str) -> "Policy":
        return cls(tuple(sorted(attributes.items())))

    def satisfied(self, attributes: Mapping[str, str]) -> bool:
        return all(attributes.get(k) == v for k, v in self.required)

    def canonical(self) -> str:
        return ";".join(f"{k}={v}" for k, v in sorted(self.required))


SUPERVISE_POLICY = Policy.of(role="supervise")


@dataclass(frozen=True)
class Credential:
    """Authority-signed binding of a node id, its attributes, and its key."""

    node_id: str
    attributes: tuple[tuple[str, str], ...]
    public_key: bytes  # raw X25519
    signature: bytes

    @property
    def attribute_map(self) -> dict[str, str]:
        return dict(self.attributes)


def _credential_payload(node_id: str, attributes: tuple[tuple[str, str], ...],
                        public_key: bytes) -> bytes:
    attrs = ";".join(f"{k}={v}" for k, v in sorted(attributes))
    return f"{node_id}\n{attrs}\n{public_key.hex()}".encode()


def issue_credential(authority_secret: bytes, node_id: str,
                     attributes: Mapping[str, str], node_public: bytes) -> Credential:
    if not attributes:
        raise ParameterError("attribute set must be non-empty")
    attrs = tuple(sorted(attributes.items()))
    payload = _credential_payload(node_id, attrs, node_public)
    return Credential(node_id, attrs, node_public, sign(authority_secret, payload))


def verify_credential(credential: Credential, authority_public: bytes) -> bool:
    payload = _credential_payload(
        credential.node_id, credential.attributes, credential.public_key
    )
    try:
        return verify(authority_public, payload, credential.signature)
    except FormatError:
        return False


@dataclass
class CredentialRegistry:
    """Read-only directory of certified credentials, fixed at setup."""

    authority_public: bytes
    credentials: dict[str, Credential]

    def eligible(self, policy: Policy) -> list[Credential]:
        return [
            c for c in self.credentials.values()
            if verify_credential(c, self.authority_public)
            and policy.satisfied(c.attribute_map)
        ]


@dataclass(frozen=True)
class SealedShare:
    """Hybrid ciphertext openable only through a policy-satisfying credential.

    `ciphertext` carries the 16-byte GCM tag as its suffix; `wrapped_keys`
    maps each eligible node id to (ephemeral public, nonce, wrapped content
    key). The policy and recipient fingerprint are bound as associated data,
    so any bit flip anywhere fails authentication.
    """

    policy: Policy
    recipient_fingerprint: str
    ciphertext: bytes
    nonce: bytes
    wrapped_keys: tuple[tuple[str, bytes, bytes, bytes], ...]
    authority_public: bytes

    @property
    def tag(self) -> bytes:
        return self.ciphertext[-16:]


def _recipient_fingerprint(recipients: list[Credential]) -> str:
    material = b"".join(
        c.node_id.encode() + c.public_key for c in sorted(recipients, key=lambda c: c.node_id)
    )
    return hashlib.sha256(material).hexdigest()


def _kek(shared: bytes, context: bytes) -> bytes:
    return HKDF(algorithm=SHA256(), length=32, salt=None, info=context).derive(shared)


def seal(payload: bytes, policy: Policy, registry: CredentialRegistry,
         rng: random.Random) -> SealedShare:
    """Encrypt payload so that only policy-satisfying credential holders open it."""
    recipients = registry.eligible(policy)
    if not recipients:
        raise NoEligibleRecipient(f"no registered credential satisfies {policy.canonical()}")
    fingerprint = _recipient_fingerprint(recipients)
    aad = f"{policy.canonical()}\n{fingerprint}".encode()
    content_key = rng.randbytes(32)
    nonce = rng.randbytes(12)
    ciphertext = AESGCM(content_key).encrypt(nonce, payload, aad)
    wrapped = []
    for credential in sorted(recipients, key=lambda c: c.node_id):
        ephemeral = X25519PrivateKey.from_private_bytes(rng.randbytes(32))
        shared = ephemeral.exchange(X25519PublicKey.from_public_bytes(credential.public_key))
        kek = _kek(shared, aad + credential.node_id.encode())
        wrap_nonce = rng.randbytes(12)
        wrapped_key = AESGCM(kek).encrypt(wrap_nonce, content_key, aad)
        eph_pub = ephemeral.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        wrapped.append((credential.node_id, eph_pub, wrap_nonce, wrapped_key))
    return SealedShare(
        policy=policy,
        recipient_fingerprint=fingerprint,
        ciphertext=ciphertext,
        nonce=nonce,
        wrapped_keys=tuple(wrapped),
        authority_public=registry.authority_public,
    )


def open_sealed(sealed: SealedShare, credential: Credential, node_secret: bytes) -> bytes:
    """Recover the payload; every failure mode maps to a distinct error."""
    if not verify_credential(credential, sealed.authority_public):
        raise CredentialInvalid(f"credential for {credential.node_id} does not verify")
    if not sealed.policy.satisfied(credential.attribute_map):
        raise PolicyUnsatisfied(
            f"{credential.node_id} lacks attributes for {sealed.policy.canonical()}"
        )
    entry = next((w for w in sealed.wrapped_keys if w[0] == credential.node_id), None)
    if entry is None:
        raise AuthFailure(f"{credential.node_id} holds no wrapped key in this seal")
    _, eph_pub, wrap_nonce, wrapped_key = entry
    aad = f"{sealed.policy.canonical()}\n{sealed.recipient_fingerprint}".encode()
    try:
        shared = X25519PrivateKey.from_private_bytes(node_secret).exchange(
            X25519PublicKey.from_public_bytes(eph_pub)
        )
        kek = _kek(shared, aad + credential.node_id.encode())
        content_key = AESGCM(kek).decrypt(wrap_nonce, wrapped_key, aad)
        return AESGCM(content_key).decrypt(sealed.nonce, sealed.ciphertext, aad)
    except (InvalidTag, ValueError) as e:
        raise AuthFailure("sealed payload failed authenticated decryption") from e


def serialize_sealed(sealed: SealedShare) -> str:
    lines = [
        f"policy: {sealed.policy.canonical()}",
        f"recipient_fingerprint: {sealed.recipient_fingerprint}",
        f"ciphertext: {sealed.ciphertext[:-16].hex()}",
        f"tag: {sealed.tag.hex()}",
        f"nonce: {sealed.nonce.hex()}",
        f"authority_public: {sealed.authority_public.hex()}",
    ]
    for node_id, eph, wn, wk in sealed.wrapped_keys:
        lines.append(f"recipient: {node_id},{eph.hex()},{wn.hex()},{wk.hex()}")
    return "\n".join(lines) + "\n"


def parse_sealed(text: str) -> SealedShare:
    fields: dict[str, str] = {}
    wrapped = []
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise FormatError(f"malformed line {line!r}")
        key, value = key.strip(), value.strip()
        if key == "recipient":
            parts = value.split(",")
            if len(parts) != 4:
                raise FormatError("recipient entries need four comma fields")
            wrapped.append((parts[0], bytes.fromhex(parts[1]),
                            bytes.fromhex(parts[2]), bytes.fromhex(parts[3])))
        else:
            fields[key] = value
    try:
        required = tuple(
            tuple(pair.split("=", 1)) for pair in fields["policy"].split(";")
        )
        return SealedShare(
            policy=Policy(tuple((k, v) for k, v in required)),
            recipient_fingerprint=fields["recipient_fingerprint"],
            ciphertext=bytes.fromhex(fields["ciphertext"]) + bytes.fromhex(fields["tag"]),
            nonce=bytes.fromhex(fields["nonce"]),
            wrapped_keys=tuple(wrapped),
            authority_public=bytes.fromhex(fields["authority_public"]),
        )
    except (KeyError, ValueError) as e:
        raise FormatError(str(e)) from e
