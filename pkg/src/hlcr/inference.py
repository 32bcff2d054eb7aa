"""
Collapsed Gibbs sampling for hierarchical latent class regression.

The per-entity likelihood of cluster ``k`` is evaluated sequentially: starting
from the cluster's statistics without the entity, each event contributes a
Gaussian predictive term and is then folded into the running ``(A^-1, b)``
pair with a rank-one update. Everything is accumulated in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from hlcr import linalg
from hlcr.linalg import DOWNDATE_EPS, downdate_inplace, update_inplace
from hlcr.model import LabelAssignment, compute_cluster_stats
from hlcr.rng import derive_rng

LOG_2PI = math.log(2.0 * math.pi)

#: Sweeps between full rebuilds of every H from its shadow D.
REBUILD_EVERY = 50


@njit(cache=True, nogil=True)
def _sequential_loglik(H, c, X, y, s, sigma2, A, b, work):
    # A, b are scratch copies of H, c; the caller's arrays stay untouched.
    F = X.shape[1]
    for a in range(F):
        b[a] = c[a]
        for e in range(F):
            A[a, e] = H[a, e]
    total = 0.0
    n_events = X.shape[0]
    for n in range(n_events):
        x = X[n]
        mean = 0.0
        q = 0.0
        for a in range(F):
            acc = 0.0
            for e in range(F):
                acc += A[a, e] * x[e]
            work[a] = acc
            mean += b[a] * acc
            q += x[a] * acc
        var = sigma2 + q
        r = y[n] - mean
        total += -0.5 * (LOG_2PI + math.log(var) + r * r / var)
        if n + 1 < n_events:
            coef = s / (1.0 + s * q)
            for a in range(F):
                for e in range(a, F):
                    v = 0.5 * (A[a, e] + A[e, a]) - coef * work[a] * work[e]
                    A[a, e] = v
                    A[e, a] = v
                b[a] += s * x[a] * y[n]
    return total


@njit(cache=True, nogil=True)
def _cluster_logliks(Hs, cs, X, y, s, sigma2, out):
    F = X.shape[1]
    A = np.empty((F, F))
    b = np.empty(F)
    work = np.empty(F)
    for k in range(Hs.shape[0]):
        out[k] = _sequential_loglik(Hs[k], cs[k], X, y, s, sigma2, A, b, work)


@njit(cache=True, nogil=True)
def _add_events(H, D, c, X, y, s):
    F = X.shape[1]
    work = np.empty(F)
    for n in range(X.shape[0]):
        x = X[n]
        update_inplace(H, x, s, work)
        for a in range(F):
            c[a] += s * x[a] * y[n]
            for e in range(F):
                D[a, e] += s * x[a] * x[e]


@njit(cache=True, nogil=True)
def _remove_events(H, D, c, X, y, s, eps):
    # Returns False if any downdate was refused; D and c are always updated,
    # H is then stale and must be rebuilt from D by the caller.
    F = X.shape[1]
    work = np.empty(F)
    ok = True
    for n in range(X.shape[0] - 1, -1, -1):
        x = X[n]
        if ok:
            ok = downdate_inplace(H, x, s, eps, work)
        for a in range(F):
            c[a] -= s * x[a] * y[n]
            for e in range(F):
                D[a, e] -= s * x[a] * x[e]
    return ok


def label_prior(agent_counts, global_counts, hp):
    """Collapsed asymmetric-Dirichlet prior over the label of one entity.

    Both count vectors must already exclude the entity being resampled.
    """
    agent_counts = np.asarray(agent_counts, dtype=np.float64)
    global_counts = np.asarray(global_counts, dtype=np.float64)
    base = (global_counts + hp.alpha / hp.K) / (global_counts.sum() + hp.alpha)
    return (agent_counts + hp.beta * base) / (agent_counts.sum() + hp.beta)


def sequential_predictive(entity, A0_inv, b0, hp):
    """Log predictive density of the entity's targets under one cluster.

    ``A0_inv`` and ``b0`` are the cluster's ``H`` and ``c`` with the entity's own
    events excluded. Event ``n`` is scored with mean ``b' A^-1 x`` and variance
    ``sigma^2 + x' A^-1 x`` using the statistics of events ``< n``.
    """
    X = np.ascontiguousarray(entity.X, dtype=np.float64)
    y = np.ascontiguousarray(entity.y, dtype=np.float64)
    F = X.shape[1]
    return _sequential_loglik(
        np.ascontiguousarray(A0_inv, dtype=np.float64), np.ascontiguousarray(b0, dtype=np.float64),
        X, y, hp.noise_precision, hp.sigma**2, np.empty((F, F)), np.empty(F), np.empty(F),
    )


@dataclass
class LabelPosterior:
    log_probs: np.ndarray
    probs: np.ndarray = field(init=False)

    def __post_init__(self):
        shifted = np.exp(self.log_probs - self.log_probs.max())
        self.probs = shifted / shifted.sum()

    def argmax(self):
        # np.argmax returns the first maximum, i.e. ties go to the lowest label
        return int(np.argmax(self.log_probs))

    def sample(self, rng):
        u = rng.random()
        k = int(np.searchsorted(np.cumsum(self.probs), u, side="right"))
        return min(k, self.probs.size - 1)


def label_posterior(entity, stats, agent_counts, global_counts, hp):
    """Unnormalized log posterior of each label, prior times sequential likelihood."""
    loglik = np.empty(stats.K)
    _cluster_logliks(stats.H, stats.c, entity.X, entity.y, hp.noise_precision, hp.sigma**2, loglik)
    with np.errstate(divide="ignore"):
        log_prior = np.log(label_prior(agent_counts, global_counts, hp))
    return LabelPosterior(log_prior + loglik)


def sample_label(entity, stats, agent_counts, global_counts, hp, rng):
    """Draw a label for ``entity``; stats and counts must exclude it."""
    return label_posterior(entity, stats, agent_counts, global_counts, hp).sample(rng)


def add_entity(stats, entity, k):
    """Fold the entity's events into cluster ``k`` in order. Mutates ``stats``."""
    _add_events(stats.H[k], stats.D[k], stats.c[k], entity.X, entity.y, stats.noise_precision)
    stats.yy[k] += stats.noise_precision * float(entity.y @ entity.y)
    stats.n_events[k] += entity.n_events
    return stats


def remove_entity(stats, entity, k):
    """Take the entity's events out of cluster ``k``, last event first. Mutates ``stats``."""
    ok = _remove_events(
        stats.H[k], stats.D[k], stats.c[k], entity.X, entity.y, stats.noise_precision, DOWNDATE_EPS
    )
    if not ok:
        stats.rebuild(k)
    stats.yy[k] -= stats.noise_precision * float(entity.y @ entity.y)
    stats.n_events[k] -= entity.n_events
    return stats


def sweep(data, labels, stats, hp, rng):
    """One Gibbs pass over every entity in (agent, entity) order. Returns the number of label changes."""
    changes = 0
    agent_counts = labels.agent_counts
    global_counts = labels.global_counts
    for i, j, ent in data.entities():
        old = labels.unassign(i, j)
        remove_entity(stats, ent, old)
        k = sample_label(ent, stats, agent_counts[i], global_counts, hp, rng)
        add_entity(stats, ent, k)
        labels.assign(i, j, k)
        changes += k != old
    return changes


def predict(x_new, k, stats):
    """Posterior-mean prediction ``c_k' H_k x`` (the ridge solution of cluster ``k``).

    ``x_new`` may be a single feature vector or a matrix of row vectors.
    """
    w = stats.H[k] @ stats.c[k]
    out = np.asarray(x_new, dtype=np.float64) @ w
    return float(out) if out.ndim == 0 else out


def ridge_weights(stats):
    return np.einsum("kab,kb->ka", stats.H, stats.c)


def choose_label(entity, stats, hp, agent_counts=None, global_counts=None, mode="argmax", rng=None):
    """Label for an entity that was not part of training.

    An empty history leaves only the prior. Missing counts are treated as zeros.
    """
    if agent_counts is None:
        agent_counts = np.zeros(stats.K)
    if global_counts is None:
        global_counts = np.zeros(stats.K)
    post = label_posterior(entity, stats, agent_counts, global_counts, hp)
    if mode == "argmax":
        return post.argmax()
    if mode == "sample":
        if rng is None:
            raise ValueError("mode='sample' needs an rng")
        return post.sample(rng)
    raise ValueError(f"unknown mode {mode!r}")


def predict_entity(x_new, stats, hp, history=None, label=None, agent_counts=None,
                   global_counts=None, mode="argmax", rng=None):
    """Two-step prediction: pick a label, then use that cluster's ridge predictor.

    A known training label (``label``) is used as is; otherwise one is chosen
    from the entity's ``history`` (an object with ``X`` and ``y``, possibly
    empty) by :func:`choose_label`.
    """
    if label is None:
        if history is None:
            raise ValueError("need either a stored label or an event history")
        label = choose_label(history, stats, hp, agent_counts, global_counts, mode, rng)
    return predict(x_new, label, stats)


def log_marginal(stats, hp):
    """Sum over clusters of the log marginal likelihood of their assigned targets."""
    F = stats.F
    total = 0.0
    for k in range(stats.K):
        n = int(stats.n_events[k])
        _, logdet = np.linalg.slogdet(stats.D[k])
        fit = stats.yy[k] - stats.c[k] @ stats.H[k] @ stats.c[k]
        total += (-0.5 * n * LOG_2PI - n * math.log(hp.sigma) - F * math.log(hp.delta)
                  - 0.5 * logdet - 0.5 * fit)
    return float(total)


def labelled_mse(data, labels, stats, heldout=None):
    """MSE on training events, and on held-out events if given, using the stored labels."""
    w = ridge_weights(stats)
    sq, n = 0.0, 0
    for i, j, ent in data.entities():
        r = ent.y - ent.X @ w[labels.z[i][j]]
        sq += float(r @ r)
        n += r.size
    mse_train = sq / n if n else float("nan")
    mse_heldout = float("nan")
    if heldout:
        sq, n = 0.0, 0
        for (i, j), (X, y) in heldout.items():
            r = y - X @ w[labels.z[i][j]]
            sq += float(r @ r)
            n += r.size
        mse_heldout = sq / n if n else float("nan")
    return mse_train, mse_heldout


@dataclass
class TrainResult:
    labels: LabelAssignment
    stats: object
    trace: list[dict]
    rng_state: dict | None = None


def train_centralized(data, hp, rng=None, heldout=None, rebuild_every=REBUILD_EVERY, init_labels=None):
    """Centralized HLCR training: random labels, then ``hp.T`` Gibbs sweeps.

    Returns the final-sweep labels and statistics plus one trace row per
    sweep. ``H`` is rebuilt from ``D`` every ``rebuild_every`` sweeps and once
    at the end, so the returned model equals one reloaded from ``(D, c)``.
    """
    if rng is None:
        rng = derive_rng(hp.seed, "train")
    labels = init_labels.copy() if init_labels is not None else LabelAssignment.uniform_random(data, hp.K, rng)
    stats = compute_cluster_stats(data, labels, hp)
    trace = []
    for t in range(1, hp.T + 1):
        changes = sweep(data, labels, stats, hp, rng)
        if rebuild_every and t % rebuild_every == 0:
            stats.rebuild()
        mse_train, mse_heldout = labelled_mse(data, labels, stats, heldout)
        trace.append({
            "sweep": t,
            "label_changes": int(changes),
            "log_marginal": log_marginal(stats, hp),
            "mse_train": mse_train,
            "mse_heldout": mse_heldout,
        })
    stats.rebuild()
    return TrainResult(labels, stats, trace, rng.bit_generator.state)
