"""
Federated HLCR simulator.

Each round the server broadcasts ``(D, c, H)`` and smoothed label counts,
a random subset of agents relabels its own entities against that snapshot
(own data is *not* removed first) and returns per-cluster sufficient
statistics, and the server blends the fresh aggregate into the previous
model with learning rate ``gamma``.

Agent updates have a versioned wire format (JSON or little-endian binary)
so the same messages could travel over a real transport.
"""
from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from hlcr import linalg
from hlcr.errors import HLCRError, InvalidParameter
from hlcr.inference import label_posterior, ridge_weights
from hlcr.rng import derive_rng

WIRE_VERSION = 1
_MAGIC = b"HLCU"
_HEADER = struct.Struct("<4sHIII")  # magic, version, round, K, F


@dataclass
class GlobalModel:
    round: int
    D: np.ndarray  # (K, F, F)
    c: np.ndarray  # (K, F)
    H: np.ndarray  # (K, F, F)
    counts: np.ndarray  # (K,) smoothed entity counts, float

    @property
    def K(self):
        return self.D.shape[0]

    @property
    def F(self):
        return self.D.shape[1]

    @classmethod
    def initial(cls, K, F, hp):
        eye = np.eye(F)
        return cls(
            round=0,
            D=np.repeat((hp.prior_precision * eye)[None], K, axis=0),
            c=np.zeros((K, F)),
            H=np.repeat((hp.delta**2 * eye)[None], K, axis=0),
            counts=np.zeros(K),
        )


@dataclass
class AgentUpdate:
    agent_id: str
    round: int
    dD: np.ndarray  # (K, F, F), sigma^-2 X'X per cluster
    dc: np.ndarray  # (K, F), sigma^-2 X'y per cluster
    n: np.ndarray  # (K,) entities per cluster

    @property
    def K(self):
        return self.dD.shape[0]

    @property
    def F(self):
        return self.dD.shape[1]

    def to_json(self):
        clusters = [
            {"D": self.dD[k].ravel().tolist(), "c": self.dc[k].tolist(), "n": int(self.n[k])}
            for k in range(self.K)
        ]
        return json.dumps({
            "version": WIRE_VERSION,
            "round": int(self.round),
            "agent_id": self.agent_id,
            "K": self.K,
            "F": self.F,
            "clusters": clusters,
        })

    @classmethod
    def from_json(cls, text):
        try:
            return cls._from_msg(json.loads(text))
        except (KeyError, TypeError, ValueError) as exc:
            raise HLCRError(f"malformed agent update: {exc}") from exc

    @classmethod
    def _from_msg(cls, msg):
        if msg.get("version") != WIRE_VERSION:
            raise HLCRError(f"unsupported agent update version {msg.get('version')!r}")
        K, F = int(msg["K"]), int(msg["F"])
        if len(msg["clusters"]) != K:
            raise HLCRError(f"expected {K} clusters, got {len(msg['clusters'])}")
        dD = np.array([cl["D"] for cl in msg["clusters"]], dtype=np.float64).reshape(K, F, F)
        dc = np.array([cl["c"] for cl in msg["clusters"]], dtype=np.float64).reshape(K, F)
        n = np.array([cl["n"] for cl in msg["clusters"]], dtype=np.int64)
        return cls(msg["agent_id"], int(msg["round"]), dD, dc, n)

    def to_bytes(self):
        aid = self.agent_id.encode("utf-8")
        parts = [_HEADER.pack(_MAGIC, WIRE_VERSION, self.round, self.K, self.F),
                 struct.pack("<I", len(aid)), aid]
        for k in range(self.K):
            parts.append(np.ascontiguousarray(self.dD[k], dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(self.dc[k], dtype="<f8").tobytes())
            parts.append(struct.pack("<Q", int(self.n[k])))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf):
        try:
            return cls._decode(buf)
        except (struct.error, ValueError) as exc:
            raise HLCRError(f"malformed agent update: {exc}") from exc

    @classmethod
    def _decode(cls, buf):
        magic, version, rnd, K, F = _HEADER.unpack_from(buf, 0)
        if magic != _MAGIC or version != WIRE_VERSION:
            raise HLCRError(f"not an agent update (magic={magic!r}, version={version})")
        off = _HEADER.size
        (alen,) = struct.unpack_from("<I", buf, off)
        off += 4
        agent_id = bytes(buf[off:off + alen]).decode("utf-8")
        off += alen
        dD, dc, n = np.empty((K, F, F)), np.empty((K, F)), np.empty(K, dtype=np.int64)
        for k in range(K):
            dD[k] = np.frombuffer(buf, dtype="<f8", count=F * F, offset=off).reshape(F, F)
            off += 8 * F * F
            dc[k] = np.frombuffer(buf, dtype="<f8", count=F, offset=off)
            off += 8 * F
            (n[k],) = struct.unpack_from("<Q", buf, off)
            off += 8
        if off != len(buf):
            raise HLCRError(f"{len(buf) - off} trailing bytes in agent update")
        return cls(agent_id, rnd, dD, dc, n)


@dataclass(frozen=True)
class RoundConfig:
    fraction: float = 1.0
    gamma: float = 0.1
    T: int = 30
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise InvalidParameter(f"fraction must lie in (0, 1], got {self.fraction!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParameter(f"gamma must lie in [0, 1], got {self.gamma!r}")
        if int(self.T) != self.T or self.T < 1:
            raise InvalidParameter(f"T must be a positive integer, got {self.T!r}")

    def agents_per_round(self, n_agents):
        # round() guards against 0.1 * 30 == 3.0000000000000004
        return max(1, math.ceil(round(self.fraction * n_agents, 9)))


def _prior_counts(memory, j, K):
    known = memory[memory >= 0]
    counts = np.bincount(known, minlength=K).astype(np.float64)
    if memory[j] >= 0:
        counts[memory[j]] -= 1.0
    return counts


def agent_local_round(agent, model, memory, hp, rng, round_=None):
    """Relabel every entity of ``agent`` against the broadcast model.

    ``memory`` holds the agent's labels from its previous participation
    (``-1`` where none) and is updated in place. The agent's own data stay in
    the model while sampling. Returns the agent's per-cluster statistics.
    """
    K, F = model.K, model.F
    s = hp.noise_precision
    dD = np.zeros((K, F, F))
    dc = np.zeros((K, F))
    n = np.zeros(K, dtype=np.int64)
    for j, ent in enumerate(agent.entities):
        counts = _prior_counts(memory, j, K)
        k = label_posterior(ent, model, counts, model.counts, hp).sample(rng)
        memory[j] = k
        dD[k] += s * (ent.X.T @ ent.X)
        dc[k] += s * (ent.X.T @ ent.y)
        n[k] += 1
    return AgentUpdate(agent.id, model.round + 1 if round_ is None else round_, dD, dc, n)


def server_aggregate(updates, prev, hp, t):
    """Sum the round's updates onto the prior and blend with ``prev`` at rate ``hp.gamma``.

    Updates are summed in ascending agent id so the result does not depend on
    arrival order.
    """
    K, F = prev.K, prev.F
    D = np.repeat((hp.prior_precision * np.eye(F))[None], K, axis=0)
    c = np.zeros((K, F))
    n = np.zeros(K)
    for u in sorted(updates, key=lambda u: u.agent_id):
        if u.round != t:
            raise HLCRError(f"update from {u.agent_id!r} is tagged round {u.round}, expected {t}")
        D += u.dD
        c += u.dc
        n += u.n
    if t > 1:
        g = hp.gamma
        D = (1.0 - g) * prev.D + g * D
        c = (1.0 - g) * prev.c + g * c
        n = (1.0 - g) * prev.counts + g * n
    H = np.empty_like(D)
    for k in range(K):
        try:
            H[k] = linalg.invert(D[k])
        except linalg.NonPositiveDefinite as exc:
            raise HLCRError(f"aggregated D for cluster {k} lost definiteness") from exc
    return GlobalModel(t, D, c, H, n)


def model_labels(data, model, hp, memories=None):
    """Argmax label of every entity given its own events and the current model."""
    labels = []
    for agent in data.agents:
        mem = memories.get(agent.id) if memories else None
        zi = np.empty(len(agent.entities), dtype=np.int64)
        for j, ent in enumerate(agent.entities):
            counts = _prior_counts(mem, j, model.K) if mem is not None else np.zeros(model.K)
            zi[j] = label_posterior(ent, model, counts, model.counts, hp).argmax()
        labels.append(zi)
    return labels


def model_mse(data, model, hp, heldout=None, memories=None):
    w = ridge_weights(model)
    z = model_labels(data, model, hp, memories)
    sq, n = 0.0, 0
    for i, j, ent in data.entities():
        r = ent.y - ent.X @ w[z[i][j]]
        sq += float(r @ r)
        n += r.size
    mse_heldout = float("nan")
    if heldout:
        hsq, hn = 0.0, 0
        for (i, j), (X, y) in heldout.items():
            r = y - X @ w[z[i][j]]
            hsq += float(r @ r)
            hn += r.size
        mse_heldout = hsq / hn
    return sq / n, mse_heldout


@dataclass
class FedResult:
    model: GlobalModel
    trace: list[dict]
    memories: dict


def run_federated(data, hp, rc, heldout=None, workers=1, on_round=None):
    """Simulate ``rc.T`` federated rounds. ``hp.gamma`` is overridden by ``rc.gamma``."""
    hp = replace(hp, gamma=rc.gamma)
    model = GlobalModel.initial(hp.K, data.feature_dim, hp)
    sampler = derive_rng(rc.seed, "fed-sample")
    memories = {a.id: np.full(len(a.entities), -1, dtype=np.int64) for a in data.agents}
    m = rc.agents_per_round(data.n_agents)
    trace = []

    def local(agent, t, snapshot):
        rng = derive_rng(rc.seed, "fed-agent", t, agent.id)
        return agent_local_round(agent, snapshot, memories[agent.id], hp, rng, round_=t)

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for t in range(1, rc.T + 1):
            chosen = [data.agents[i] for i in np.sort(sampler.choice(data.n_agents, m, replace=False))]
            before = {a.id: memories[a.id].copy() for a in chosen}
            snapshot = model
            if pool is None:
                updates = [local(a, t, snapshot) for a in chosen]
            else:
                updates = list(pool.map(lambda a: local(a, t, snapshot), chosen))
            model = server_aggregate(updates, model, hp, t)
            changes = sum(int(np.sum((before[a.id] >= 0) & (before[a.id] != memories[a.id]))) for a in chosen)
            mse_train, mse_heldout = model_mse(data, model, hp, heldout, memories)
            row = {
                "round": t,
                "mse_train": mse_train,
                "mse_heldout": mse_heldout,
                "agents_sampled": len(chosen),
                "label_changes": changes,
            }
            trace.append(row)
            if on_round is not None:
                on_round(row, model)
    finally:
        if pool is not None:
            pool.shutdown()
    return FedResult(model, trace, memories)
