"""
Domain types, sufficient statistics and the synthetic data generator.

Cluster labels are 0-based everywhere inside the package. Files written for
people (CSV, JSON checkpoints, ground truth) use 1-based labels; the
conversion happens only in :mod:`hlcr.io`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hlcr import linalg
from hlcr.errors import InvalidParameter, InvalidShape
from hlcr.rng import derive_rng


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 1.0
    sigma: float = 0.1
    K: int = 4
    gamma: float = 0.1
    T: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha", "beta", "delta", "sigma"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidParameter(f"{name} must be a positive real, got {value!r}")
        if int(self.K) != self.K or self.K < 1:
            raise InvalidParameter(f"K must be a positive integer, got {self.K!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParameter(f"gamma must lie in [0, 1], got {self.gamma!r}")
        if int(self.T) != self.T or self.T < 1:
            raise InvalidParameter(f"T must be a positive integer, got {self.T!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise InvalidParameter(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")

    @property
    def noise_precision(self):
        return 1.0 / self.sigma**2

    @property
    def prior_precision(self):
        return 1.0 / self.delta**2

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "delta": self.delta,
            "sigma": self.sigma,
            "K": int(self.K),
            "gamma": self.gamma,
            "T": int(self.T),
            "seed": int(self.seed),
        }


@dataclass
class Entity:
    """All events of one agent-entity pair; row ``n`` of ``X`` pairs with ``y[n]``."""

    id: str
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise InvalidShape(f"entity {self.id!r}: X {self.X.shape} and y {self.y.shape} disagree")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise InvalidShape(f"entity {self.id!r} has non-finite values")

    @property
    def n_events(self):
        return self.X.shape[0]


@dataclass
class Agent:
    id: str
    entities: list[Entity] = field(default_factory=list)


@dataclass
class HierDataset:
    feature_dim: int
    agents: list[Agent]

    def __post_init__(self):
        if self.feature_dim < 1:
            raise InvalidShape(f"feature_dim must be >= 1, got {self.feature_dim}")
        seen = set()
        for agent in self.agents:
            if agent.id in seen:
                raise InvalidShape(f"duplicate agent id {agent.id!r}")
            seen.add(agent.id)
            for ent in agent.entities:
                if ent.X.shape[1] != self.feature_dim:
                    raise InvalidShape(
                        f"agent {agent.id!r} entity {ent.id!r} has {ent.X.shape[1]} features, "
                        f"expected {self.feature_dim}"
                    )

    @property
    def n_agents(self):
        return len(self.agents)

    @property
    def n_entities(self):
        return sum(len(a.entities) for a in self.agents)

    @property
    def n_events(self):
        return sum(e.n_events for a in self.agents for e in a.entities)

    def entities(self):
        """Yield ``(i, j, entity)`` in ascending agent, then entity order."""
        for i, agent in enumerate(self.agents):
            for j, ent in enumerate(agent.entities):
                yield i, j, ent


def split_heldout(data, fraction=0.2):
    """Hold out the last ``floor(fraction * N_ij)`` events of every entity.

    At least one event per entity always stays in the training part. Returns
    ``(train, heldout)`` where ``heldout`` maps ``(i, j)`` to ``(X, y)`` for the
    entities that lost at least one event.
    """
    if not 0.0 <= fraction < 1.0:
        raise InvalidParameter(f"held-out fraction must lie in [0, 1), got {fraction}")
    agents = []
    heldout = {}
    for i, agent in enumerate(data.agents):
        kept = []
        for j, ent in enumerate(agent.entities):
            n_hold = min(int(np.floor(fraction * ent.n_events)), ent.n_events - 1)
            cut = ent.n_events - n_hold
            kept.append(Entity(ent.id, ent.X[:cut], ent.y[:cut]))
            if n_hold > 0:
                heldout[(i, j)] = (ent.X[cut:], ent.y[cut:])
        agents.append(Agent(agent.id, kept))
    return HierDataset(data.feature_dim, agents), heldout


class LabelAssignment:
    """Cluster labels ``z[i][j]`` with incrementally maintained counts.

    ``agent_counts[i, k]`` is the number of entities of agent ``i`` labelled
    ``k``; ``global_counts[k]`` is its column sum. A label of ``-1`` marks an
    entity that is temporarily unassigned (the ``\\ij`` state during a Gibbs
    step).
    """

    def __init__(self, z, K):
        self.K = int(K)
        self.z = [np.array(zi, dtype=np.int64) for zi in z]
        self.agent_counts, self.global_counts = _count(self.z, self.K)

    @classmethod
    def uniform_random(cls, data, K, rng):
        return cls([rng.integers(0, K, size=len(a.entities)) for a in data.agents], K)

    def unassign(self, i, j):
        k = int(self.z[i][j])
        if k >= 0:
            self.agent_counts[i, k] -= 1
            self.global_counts[k] -= 1
            self.z[i][j] = -1
        return k

    def assign(self, i, j, k):
        self.unassign(i, j)
        self.z[i][j] = k
        self.agent_counts[i, k] += 1
        self.global_counts[k] += 1

    def flat(self):
        return np.concatenate(self.z) if self.z else np.zeros(0, dtype=np.int64)

    def copy(self):
        return LabelAssignment(self.z, self.K)


def _count(z, K):
    agent_counts = np.zeros((len(z), K), dtype=np.int64)
    for i, zi in enumerate(z):
        assigned = zi[zi >= 0]
        agent_counts[i] = np.bincount(assigned, minlength=K)[:K]
    return agent_counts, agent_counts.sum(axis=0)


def recount(labels):
    """Fresh assignment whose counts are recomputed from ``labels.z``."""
    return LabelAssignment(labels.z, labels.K)


@dataclass
class ClusterStats:
    """Per-cluster sufficient statistics, stacked along axis 0.

    ``D[k] = I/delta^2 + X_k'X_k/sigma^2``, ``c[k] = X_k'y_k/sigma^2`` and
    ``H[k] = D[k]^-1``. ``yy`` and ``n_events`` are only used for the
    log-marginal diagnostic.
    """

    D: np.ndarray
    c: np.ndarray
    H: np.ndarray
    yy: np.ndarray
    n_events: np.ndarray
    prior_precision: float
    noise_precision: float

    @property
    def K(self):
        return self.D.shape[0]

    @property
    def F(self):
        return self.D.shape[1]

    @classmethod
    def empty(cls, K, F, hp):
        eye = np.eye(F)
        return cls(
            D=np.repeat((hp.prior_precision * eye)[None], K, axis=0),
            c=np.zeros((K, F)),
            H=np.repeat((hp.delta**2 * eye)[None], K, axis=0),
            yy=np.zeros(K),
            n_events=np.zeros(K, dtype=np.int64),
            prior_precision=hp.prior_precision,
            noise_precision=hp.noise_precision,
        )

    def copy(self):
        return ClusterStats(
            self.D.copy(), self.c.copy(), self.H.copy(), self.yy.copy(), self.n_events.copy(),
            self.prior_precision, self.noise_precision,
        )

    def rebuild(self, k=None):
        """Recompute ``H`` from the shadow ``D`` by direct inversion."""
        ks = range(self.K) if k is None else [k]
        for kk in ks:
            self.H[kk] = linalg.invert(self.D[kk])
        return self


def compute_cluster_stats(data, labels, hp):
    """Exact batch statistics for every cluster under ``labels``."""
    F = data.feature_dim
    stats = ClusterStats.empty(hp.K, F, hp)
    s = hp.noise_precision
    flat_z = labels.flat()
    if flat_z.size and flat_z.max() >= hp.K:
        raise InvalidShape(f"label {flat_z.max()} out of range for K={hp.K}")
    for k in range(hp.K):
        blocks = [(e.X, e.y) for i, j, e in data.entities() if labels.z[i][j] == k]
        if not blocks:
            continue
        X = np.concatenate([b[0] for b in blocks])
        y = np.concatenate([b[1] for b in blocks])
        stats.D[k] = hp.prior_precision * np.eye(F) + s * (X.T @ X)
        stats.c[k] = s * (X.T @ y)
        stats.yy[k] = s * (y @ y)
        stats.n_events[k] = y.size
        stats.H[k] = linalg.invert(stats.D[k])
    return stats


@dataclass
class GroundTruth:
    w: np.ndarray  # (K, F)
    psi: np.ndarray  # (K,)
    theta: np.ndarray  # (N, K)
    z: list[np.ndarray]


def sample_dirichlet(rng, concentration):
    """Dirichlet draw from normalized Gamma variates, computed in log space.

    Uses ``G(a) = G(a + 1) * U**(1/a)`` so tiny concentrations do not
    underflow to an all-zero vector. Zero concentrations give zero mass.
    """
    conc = np.asarray(concentration, dtype=np.float64)
    g = rng.standard_gamma(conc + 1.0)
    u = rng.random(conc.shape)
    with np.errstate(divide="ignore"):
        log_g = np.where(conc > 0, np.log(g) + np.log(u) / np.where(conc > 0, conc, 1.0), -np.inf)
    p = np.exp(log_g - log_g.max())
    return p / p.sum()


def generate_synthetic(hp, N, mean_entities, mean_events, F, rng_seed=None, bias=False):
    """Draw a synthetic dataset from the HLCR generative process.

    Features are i.i.d. standard normal; with ``bias=True`` a constant 1 is
    appended so the dataset has ``F + 1`` columns. Entity and event counts are
    ``1 + Poisson(mean - 1)``.
    """
    if N < 1 or F < 1:
        raise InvalidShape(f"N and F must be >= 1, got N={N}, F={F}")
    if mean_entities < 1 or mean_events < 1:
        raise InvalidShape("mean entity and event counts must be >= 1")
    rng = derive_rng(hp.seed if rng_seed is None else rng_seed, "generate")
    K = hp.K
    dim = F + 1 if bias else F

    w = hp.delta * rng.standard_normal((K, dim))
    psi = sample_dirichlet(rng, np.full(K, hp.alpha / K))
    theta = np.stack([sample_dirichlet(rng, hp.beta * psi) for _ in range(N)])

    agents, z = [], []
    width = len(str(N - 1))
    for i in range(N):
        n_ent = 1 + int(rng.poisson(mean_entities - 1))
        zi = rng.choice(K, size=n_ent, p=theta[i])
        entities = []
        for j in range(n_ent):
            n_ev = 1 + int(rng.poisson(mean_events - 1))
            X = rng.standard_normal((n_ev, F))
            if bias:
                X = np.hstack([X, np.ones((n_ev, 1))])
            y = X @ w[zi[j]] + hp.sigma * rng.standard_normal(n_ev)
            entities.append(Entity(f"e{j}", X, y))
        agents.append(Agent(f"a{i:0{width}d}", entities))
        z.append(zi.astype(np.int64))
    return HierDataset(dim, agents), GroundTruth(w, psi, theta, z)
