"""Supervised key escrow, encrypted-update inspection, and penalties.

The federation decryption key is split limb-wise with threshold sharing,
every share is sealed to the supervise policy, and the sealed shares are
spread over custodians drawn from all node roles. A supervisor holding the
supervise credential can rebuild the key from any threshold of consenting
custodians, decrypt the stored ciphertext shards of a suspect round, and
score each node's update by cosine similarity against the coordinate-wise
median update; nodes scoring below the threshold lose their stake and,
past the repeat-offense limit, their seat.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

import numpy as np

from . import envelope, paillier, shamir
from .errors import ParameterError, PolicyUnsatisfied, ShardSetIncomplete, ThresholdNotMet

DEFAULT_STAKE = 10.0


@dataclass(frozen=True)
class NodeIdentity:
    """What a node holds privately: its credential and decryption secret."""

    node_id: str
    credential: envelope.Credential
    enc_secret: bytes


@dataclass
class EscrowRecord:
    """Sealed threshold shares of one owner's serialized decryption key."""

    key_owner: str
    params: shamir.FieldParams
    byte_length: int
    custodians: tuple[str, ...]
    sealed: list[dict[str, envelope.SealedShare]]  # per limb: custodian -> share

    @property
    def limb_count(self) -> int:
        return len(self.sealed)


def choose_custodians(registry, count: int, rng: random.Random) -> tuple[str, ...]:
    """Representative mix across roles: supervisor and global node first,
    then edge nodes, then randomly drawn training nodes."""
    pool = [registry.supervise_nodes[0], registry.global_node]
    pool += registry.edge_nodes
    locals_shuffled = list(registry.local_nodes)
    rng.shuffle(locals_shuffled)
    pool += locals_shuffled
    if count > len(pool):
        raise ParameterError(f"need {count} custodians, only {len(pool)} nodes exist")
    return tuple(pool[:count])


def register_key(owner: str, he_secret, params: shamir.FieldParams,
                 registry, rng: random.Random) -> EscrowRecord:
    """Escrow a decryption key: limb-wise split, seal, assign custodians."""
    custodians = choose_custodians(registry, params.share_count, rng)
    secret_bytes = paillier.serialize_secret_key(he_secret).encode()
    limb_shares = shamir.split_bytes(secret_bytes, params, rng, key_owner=owner)
    sealed: list[dict[str, envelope.SealedShare]] = []
    for shares in limb_shares:
        limb_sealed = {}
        for custodian, share in zip(custodians, shares):
            payload = shamir.serialize_share(share, params).encode()
            limb_sealed[custodian] = envelope.seal(
                payload, envelope.SUPERVISE_POLICY, registry.credentials, rng)
        sealed.append(limb_sealed)
    return EscrowRecord(
        key_owner=owner,
        params=params,
        byte_length=len(secret_bytes),
        custodians=custodians,
        sealed=sealed,
    )


def reconstruct_key(supervisor: NodeIdentity, escrow: EscrowRecord,
                    consenting: list[str]) -> paillier.HeSecretKey:
    """Rebuild the escrowed key from a threshold of consenting custodians."""
    if not envelope.SUPERVISE_POLICY.satisfied(supervisor.credential.attribute_map):
        raise PolicyUnsatisfied(f"{supervisor.node_id} is not a supervise node")
    responders = [c for c in consenting if c in escrow.custodians]
    limb_shares: list[list[shamir.SecretShare]] = []
    for limb_sealed in escrow.sealed:
        shares = []
        for custodian in responders:
            payload = envelope.open_sealed(
                limb_sealed[custodian], supervisor.credential, supervisor.enc_secret)
            share, _ = shamir.parse_share(payload.decode())
            shares.append(share)
        if len(shares) < escrow.params.threshold:
            raise ThresholdNotMet(
                f"{len(shares)} consenting custodians, threshold {escrow.params.threshold}")
        limb_shares.append(shares)
    secret_bytes = shamir.reconstruct_bytes(limb_shares, escrow.params, escrow.byte_length)
    return paillier.parse_secret_key(secret_bytes.decode())


@dataclass
class InspectionReport:
    round_index: int
    fingerprints: dict[str, str]
    scores: dict[str, float]
    flagged: frozenset[str]
    action: str


def inspect(supervisor: NodeIdentity, round_index: int,
            stored_shards: dict[str, dict[int, paillier.CipherVector]],
            he_secret, codec: paillier.FixedPointCodec,
            original_length: int, layer_shapes,
            threshold: float = 0.0) -> InspectionReport:
    """Decrypt each node's stored update and flag outliers.

    The score is the cosine similarity between a node's decrypted update
    and the coordinate-wise median update across all inspected nodes; a
    sign-flipped update sits antipodal to the benign cluster and scores
    negative whenever flipped nodes are a minority.
    """
    if not envelope.SUPERVISE_POLICY.satisfied(supervisor.credential.attribute_map):
        raise PolicyUnsatisfied(f"{supervisor.node_id} is not a supervise node")
    if not stored_shards:
        raise ShardSetIncomplete("no stored ciphertext shards for this round")
    updates: dict[str, np.ndarray] = {}
    fingerprints: dict[str, str] = {}
    for node_id, shards in sorted(stored_shards.items()):
        ordered = paillier.concat(list(shards.values()))
        pieces = [codec.decode(paillier.decrypt(he_secret, c), c.scale) for c in ordered]
        flat = np.concatenate(pieces)[:original_length]
        updates[node_id] = flat
        fingerprints[node_id] = hashlib.sha256(flat.astype("<f8").tobytes()).hexdigest()
    median = np.median(np.stack(list(updates.values())), axis=0)
    med_norm = float(np.linalg.norm(median))
    scores = {}
    for node_id, vec in updates.items():
        norm = float(np.linalg.norm(vec))
        if norm == 0.0 or med_norm == 0.0:
            scores[node_id] = 0.0
        else:
            scores[node_id] = float(np.clip(vec @ median / (norm * med_norm), -1.0, 1.0))
    flagged = frozenset(n for n, s in scores.items() if s < threshold)
    return InspectionReport(
        round_index=round_index,
        fingerprints=fingerprints,
        scores=scores,
        flagged=flagged,
        action="exclude_and_penalize" if flagged else "none",
    )


@dataclass
class LedgerEntry:
    node_id: str
    stake: float = DEFAULT_STAKE
    cumulative_reward: float = 0.0
    offense_count: int = 0
    blacklisted: bool = False


@dataclass
class StakeLedger:
    entries: dict[str, LedgerEntry] = field(default_factory=dict)

    @classmethod
    def for_nodes(cls, node_ids, stake: float = DEFAULT_STAKE) -> "StakeLedger":
        return cls({n: LedgerEntry(n, stake=stake) for n in node_ids})

    def add_reward(self, node_id: str, amount: float) -> None:
        self.entries[node_id].cumulative_reward += amount

    def blacklisted_nodes(self) -> set[str]:
        return {n for n, e in self.entries.items() if e.blacklisted}


@dataclass(frozen=True)
class ReaggregationDirective:
    """Tells the aggregation layer to redo the round without these nodes."""

    round_index: int
    exclude: frozenset[str]


def penalize(report: InspectionReport, ledger: StakeLedger,
             repeat_threshold: int = 1) -> ReaggregationDirective:
    """Zero the stake of flagged nodes and blacklist repeat offenders."""
    for node_id in sorted(report.flagged):
        entry = ledger.entries[node_id]
        entry.stake = 0.0
        entry.offense_count += 1
        if entry.offense_count >= repeat_threshold:
            entry.blacklisted = True
    return ReaggregationDirective(round_index=report.round_index, exclude=report.flagged)


@dataclass
class ShardRetention:
    """Bounded per-round history of submitted ciphertext shards."""

    max_rounds: int = 5
    history: dict[int, dict[str, dict[int, paillier.CipherVector]]] = field(default_factory=dict)

    def store(self, round_index: int,
              submissions: dict[str, dict[int, paillier.CipherVector]]) -> None:
        self.history[round_index] = submissions
        while len(self.history) > self.max_rounds:
            del self.history[min(self.history)]

    def get(self, round_index: int) -> dict[str, dict[int, paillier.CipherVector]]:
        if round_index not in self.history:
            raise ShardSetIncomplete(f"round {round_index} is no longer retained")
        return self.history[round_index]
