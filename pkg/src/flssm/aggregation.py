"""Hierarchical encrypted aggregation round driver.

One round: every active training node fits the shared model on its own
data, optionally applies the configured attack, splits the flattened
update into one shard per edge node, encrypts each shard, and submits
them. Edge nodes average their shard across nodes under encryption, the
global node concatenates the partials, and the result is decrypted for
the next round.

Timing is recorded two ways: a deterministic operation count per edge
node, and elapsed milliseconds (modeled on the virtual clock, measured
under the wall clock with a thread per edge node).
"""

from __future__ import annotations

import hashlib
import random
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import nn, paillier
from .data import Dataset
from .errors import ParameterError, ShapeMismatch, ShardSetIncomplete
from .tsa import TimestampAuthority, TimestampToken, VirtualClock

KIND_GLOBAL_MODEL = "GlobalModel"
KIND_SHARD_SUBMISSION = "ShardSubmission"
KIND_PARTIAL_MODEL = "PartialModel"
KIND_GLOBAL_CIPHER = "GlobalCipher"
KIND_INSPECT_REQUEST = "InspectRequest"
KIND_KEY_SHARE_REQUEST = "KeyShareRequest"


@dataclass(frozen=True)
class Message:
    kind: str
    sender: str
    receiver: str
    payload: bytes
    latency_ms: float = 0.0


class Network:
    """In-process message fabric; FIFO per (sender, receiver) pair."""

    def __init__(self):
        self._queues: dict[tuple[str, str], deque[Message]] = {}
        self.delivered: list[Message] = []

    def send(self, message: Message) -> None:
        self._queues.setdefault((message.sender, message.receiver), deque()).append(message)

    def receive(self, sender: str, receiver: str) -> Message:
        queue = self._queues.get((sender, receiver))
        if not queue:
            raise ShardSetIncomplete(f"no pending message from {sender} to {receiver}")
        message = queue.popleft()
        self.delivered.append(message)
        return message

    def receive_all(self, receiver: str) -> list[Message]:
        out = []
        for (sender, rcv), queue in sorted(self._queues.items()):
            if rcv != receiver:
                continue
            while queue:
                out.append(queue.popleft())
        self.delivered.extend(out)
        return out


@dataclass
class NodeRegistry:
    """Who is who, the federation public key, and the shard assignment."""

    local_nodes: list[str]
    edge_nodes: list[str]
    global_node: str
    supervise_nodes: list[str]
    he_public: object
    credentials: object = None

    def __post_init__(self):
        if not self.local_nodes or not self.edge_nodes or not self.supervise_nodes:
            raise ParameterError("need at least one node of each kind")
        names = self.local_nodes + self.edge_nodes + [self.global_node] + self.supervise_nodes
        if len(set(names)) != len(names):
            raise ParameterError("node identifiers must be unique")

    @property
    def shard_count(self) -> int:
        return len(self.edge_nodes)

    def edge_for_shard(self, round_index: int, shard_index: int) -> str:
        """Round-robin rotation of shard responsibility across edge nodes."""
        if not 1 <= shard_index <= self.shard_count:
            raise ParameterError(f"shard index {shard_index} outside 1..{self.shard_count}")
        return self.edge_nodes[(shard_index + round_index) % self.shard_count]


@dataclass
class FederationContext:
    """Everything static across rounds, bundled for the round driver."""

    registry: NodeRegistry
    he_secret: object
    codec: paillier.FixedPointCodec
    node_datasets: dict[str, Dataset]
    malicious_nodes: frozenset[str]
    blacklist: set[str]
    tsa: TimestampAuthority
    clock: object
    network: Network
    rng: random.Random
    train_cost_ms: dict[str, float]  # modeled cost per sample per epoch
    layer_shapes: tuple[tuple[int, int], ...]
    original_length: int
    dropout_nodes: frozenset[str] = frozenset()

    @property
    def virtual(self) -> bool:
        return isinstance(self.clock, VirtualClock)


@dataclass
class Submission:
    """One node's round contribution as retained by the edge layer."""

    node_id: str
    shards: dict[int, paillier.CipherVector]
    cipher_bytes: bytes
    end_token: TimestampToken | None
    train_duration_ms: float
    received_digest: bytes = b""


@dataclass
class RoundState:
    round_index: int
    global_model: nn.ModelParams
    global_cipher: list[paillier.CipherVector] | None = None
    submissions: dict[str, Submission] = field(default_factory=dict)
    edge_timings_ms: dict[str, float] = field(default_factory=dict)
    total_duration_ms: float = 0.0


@dataclass
class RoundResult:
    round_index: int
    global_model: nn.ModelParams
    global_cipher: list[paillier.CipherVector]
    kappa_effective: int
    submissions: dict[str, Submission]
    start_token: TimestampToken
    edge_timings_ms: dict[str, float]
    wall_agg_ms: float
    cost_additions_per_edge: int
    shard_length: int
    # harness-side oracle data; protocol nodes never see these
    oracle_plain_locals: dict[str, np.ndarray]
    oracle_plain_mean: np.ndarray


def edge_aggregate(shards: list[paillier.CipherVector],
                   kappa_effective: int | None = None
                   ) -> tuple[paillier.CipherVector, int]:
    """Encrypted mean of same-shard submissions; returns (cipher, additions)."""
    if not shards:
        raise ShardSetIncomplete("no shards to aggregate")
    indices = {s.shard_index for s in shards}
    if len(indices) != 1:
        raise ShapeMismatch(f"mixed shard indices {sorted(indices)}")
    divisor = len(shards) if kappa_effective is None else kappa_effective
    total = shards[0]
    additions = 0
    for shard in shards[1:]:
        total = paillier.add(total, shard)
        additions += total.logical_length
    return paillier.scale_plain(total, Fraction(1, divisor)), additions


def aggregation_cost(kappa_effective: int, shard_length: int) -> int:
    """Deterministic per-edge-node cost: ciphertext additions for one shard."""
    return (kappa_effective - 1) * shard_length


def global_concat(partials: list[paillier.CipherVector]) -> list[paillier.CipherVector]:
    return paillier.concat(partials)


def decrypt_global(cipher: list[paillier.CipherVector], he_secret, codec,
                   original_length: int,
                   layer_shapes: tuple[tuple[int, int], ...]) -> nn.ModelParams:
    """Decrypt + decode the concatenated shards and rebuild model parameters."""
    pieces = [codec.decode(paillier.decrypt(he_secret, c), c.scale) for c in cipher]
    flat = np.concatenate(pieces)[:original_length]
    return nn.unflatten_vector(flat, layer_shapes)


def _cipher_payloads(shards: dict[int, paillier.CipherVector]) -> dict[int, bytes]:
    return {idx: paillier.serialize_cipher_vector(c).encode() for idx, c in shards.items()}


def submission_bytes(shards: dict[int, paillier.CipherVector]) -> bytes:
    """Canonical bytes of a node's full encrypted update, shards in index order."""
    payloads = _cipher_payloads(shards)
    return b"".join(payloads[idx] for idx in sorted(payloads))


def _train_one(context: FederationContext, config, state: RoundState,
               node_id: str) -> tuple[nn.ModelParams, float]:
    data = context.node_datasets[node_id]
    seed = _node_round_seed(config.seed, state.round_index, node_id)
    wall_start = time.perf_counter()
    update = nn.local_train(state.global_model, data, config.epochs, config.lr,
                            config.batch_size, seed)
    wall_ms = (time.perf_counter() - wall_start) * 1000.0
    if context.virtual:
        duration = len(data) * config.epochs * context.train_cost_ms[node_id]
    else:
        duration = wall_ms
    if node_id in context.malicious_nodes:
        update = nn.sign_flip_attack(update)
    return update, duration


def _node_round_seed(seed: int, round_index: int, node_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{round_index}:{node_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def run_round(state: RoundState, context: FederationContext, config) -> RoundResult:
    """Execute local training, edge aggregation, concatenation, and decryption."""
    registry = context.registry
    rho = registry.shard_count
    round_start_ms = context.clock.now_ms()

    active = [n for n in registry.local_nodes if n not in context.blacklist]
    if not active:
        raise ShardSetIncomplete("every training node is blacklisted")

    # round-start stamp over the distributed global model
    model_payload = nn.model_bytes(state.global_model)
    start_token = context.tsa.stamp(hashlib.sha256(model_payload).digest())
    for node_id in active:
        context.network.send(Message(KIND_GLOBAL_MODEL, registry.global_node,
                                     node_id, model_payload))

    # local training + encryption; submissions flow to the assigned edge node
    oracle_locals: dict[str, np.ndarray] = {}
    enc_rng = random.Random(f"{config.seed}:{state.round_index}:encrypt")
    for node_id in active:
        context.network.receive(registry.global_node, node_id)
        update, duration = _train_one(context, config, state, node_id)
        oracle_locals[node_id] = nn.flatten(update)
        sharded = nn.flatten_shard(update, rho)
        shards = {
            idx + 1: paillier.encrypt(
                registry.he_public, context.codec.encode(vec), idx + 1,
                enc_rng, scale=context.codec.scale)
            for idx, vec in enumerate(sharded.shards)
        }
        state.submissions[node_id] = Submission(
            node_id=node_id,
            shards=shards,
            cipher_bytes=submission_bytes(shards),
            end_token=None,
            train_duration_ms=duration,
        )

    # end stamps in completion order so the authority clock stays monotone
    for node_id in sorted(active, key=lambda n: (state.submissions[n].train_duration_ms, n)):
        sub = state.submissions[node_id]
        if context.virtual:
            context.clock.advance_to(round_start_ms + sub.train_duration_ms)
        sub.end_token = context.tsa.stamp(hashlib.sha256(sub.cipher_bytes).digest())
        if node_id in context.dropout_nodes:
            continue
        payloads = _cipher_payloads(sub.shards)
        for idx in sorted(payloads):
            context.network.send(Message(
                KIND_SHARD_SUBMISSION, node_id,
                registry.edge_for_shard(state.round_index, idx), payloads[idx]))

    # edge nodes read their inboxes; a node submitting only part of its
    # shard set leaves the round in an undefined state and aborts it
    received: dict[int, list[paillier.CipherVector]] = {idx: [] for idx in range(1, rho + 1)}
    submitters: dict[str, set[int]] = {}
    for idx in range(1, rho + 1):
        edge_id = registry.edge_for_shard(state.round_index, idx)
        for node_id in active:
            if node_id in context.dropout_nodes:
                continue
            message = context.network.receive(node_id, edge_id)
            cipher = paillier.parse_cipher_vector(message.payload.decode(), registry.he_public)
            if cipher.shard_index != idx:
                raise ShapeMismatch(
                    f"{edge_id} expected shard {idx}, got {cipher.shard_index}")
            received[idx].append(cipher)
            submitters.setdefault(node_id, set()).add(idx)
    for node_id, idx_set in submitters.items():
        if idx_set != set(range(1, rho + 1)):
            raise ShardSetIncomplete(
                f"{node_id} submitted shards {sorted(idx_set)} of 1..{rho}")
        digest = hashlib.sha256(state.submissions[node_id].cipher_bytes).digest()
        state.submissions[node_id].received_digest = digest

    kappa_effective = len(submitters)
    if kappa_effective == 0:
        raise ShardSetIncomplete("no complete submissions this round")

    partials, edge_timings, wall_agg_ms = _aggregate_phase(
        received, kappa_effective, state.round_index, context, config)
    state.edge_timings_ms = edge_timings
    for idx in sorted(received):
        edge_id = registry.edge_for_shard(state.round_index, idx)
        context.network.send(Message(
            KIND_PARTIAL_MODEL, edge_id, registry.global_node,
            paillier.serialize_cipher_vector(partials[idx]).encode()))
    collected = [
        paillier.parse_cipher_vector(
            context.network.receive(registry.edge_for_shard(state.round_index, idx),
                                    registry.global_node).payload.decode(),
            registry.he_public)
        for idx in sorted(received)
    ]
    global_cipher = global_concat(collected)
    state.global_cipher = global_cipher

    cipher_payload = b"".join(
        paillier.serialize_cipher_vector(c).encode() for c in global_cipher)
    for node_id in active:
        context.network.send(Message(KIND_GLOBAL_CIPHER, registry.global_node,
                                     node_id, cipher_payload))
        context.network.receive(registry.global_node, node_id)

    new_global = decrypt_global(global_cipher, context.he_secret, context.codec,
                                context.original_length, context.layer_shapes)

    shard_length = global_cipher[0].logical_length
    order = sorted(oracle_locals)
    plain_mean = np.mean([oracle_locals[n] for n in order], axis=0)
    state.total_duration_ms = context.clock.now_ms() - round_start_ms
    return RoundResult(
        round_index=state.round_index,
        global_model=new_global,
        global_cipher=global_cipher,
        kappa_effective=kappa_effective,
        submissions=state.submissions,
        start_token=start_token,
        edge_timings_ms=dict(state.edge_timings_ms),
        wall_agg_ms=wall_agg_ms,
        cost_additions_per_edge=aggregation_cost(kappa_effective, shard_length),
        shard_length=shard_length,
        oracle_plain_locals=oracle_locals,
        oracle_plain_mean=plain_mean,
    )


def _aggregate_phase(received: dict[int, list[paillier.CipherVector]],
                     kappa_effective: int, round_index: int,
                     context: FederationContext, config
                     ) -> tuple[dict[int, paillier.CipherVector], dict[str, float], float]:
    """Aggregate every shard, one edge node each.

    Returns (partials by shard index, per-edge-node duration ms, phase ms).
    Virtual mode derives durations from the operation-count cost model and
    advances the clock by the slowest edge node (they run in parallel);
    wall mode measures a thread pool with one worker per edge node.
    """
    registry = context.registry

    def work(idx: int) -> tuple[int, paillier.CipherVector, int, float]:
        begin = time.perf_counter()
        cipher, additions = edge_aggregate(received[idx], kappa_effective)
        return idx, cipher, additions, (time.perf_counter() - begin) * 1000.0

    if context.virtual:
        results = [work(idx) for idx in sorted(received)]
    else:
        phase_begin = time.perf_counter()
        with ThreadPoolExecutor(max_workers=len(received)) as pool:
            results = list(pool.map(work, sorted(received)))
        phase_ms = (time.perf_counter() - phase_begin) * 1000.0

    partials: dict[int, paillier.CipherVector] = {}
    timings: dict[str, float] = {}
    for idx, cipher, additions, measured_ms in results:
        partials[idx] = cipher
        if context.virtual:
            duration = (additions * config.cost_add_ms
                        + cipher.logical_length * config.cost_scale_ms)
        else:
            duration = measured_ms
        timings[registry.edge_for_shard(round_index, idx)] = duration
    if context.virtual:
        phase_ms = max(timings.values())
        context.clock.advance(phase_ms)
    return partials, timings, phase_ms
