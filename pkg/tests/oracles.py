"""Reference computations that share no code path with the library internals.

Everything here uses dense linear algebra on the full design matrices:
no rank-one updates, no cached inverses.
"""
import itertools

import numpy as np
from scipy.stats import multivariate_normal


def log_evidence(X, y, delta, sigma):
    """log p(y | X) with w ~ N(0, delta^2 I) integrated out: y ~ N(0, sigma^2 I + delta^2 X X')."""
    n = len(y)
    if n == 0:
        return 0.0
    cov = sigma**2 * np.eye(n) + delta**2 * X @ X.T
    return float(multivariate_normal(mean=np.zeros(n), cov=cov).logpdf(y))


def marginal_ratio(X_bg, y_bg, X_ent, y_ent, delta, sigma):
    """log p(y_ent | X_ent, X_bg, y_bg) as a ratio of two joint evidences."""
    X_all = np.vstack([X_bg, X_ent])
    y_all = np.concatenate([y_bg, y_ent])
    return log_evidence(X_all, y_all, delta, sigma) - log_evidence(X_bg, y_bg, delta, sigma)


def posterior_form_loglik(D0, c0, X, y, sigma):
    """Sequential log-likelihood written with A_n^-1 (the statistics *including* event n).

    mean = b_{n-1}' A_n^-1 x / (1 - x'A_n^-1 x / sigma^2),
    var  = sigma^2 / (1 - x'A_n^-1 x / sigma^2); each A_n is inverted directly.
    """
    s = 1.0 / sigma**2
    A, b = D0.copy(), c0.copy()
    total = 0.0
    for x, yn in zip(X, y):
        A = A + s * np.outer(x, x)
        A_inv = np.linalg.inv(A)
        shrink = 1.0 - s * x @ A_inv @ x
        mean = b @ A_inv @ x / shrink
        var = sigma**2 / shrink
        total += -0.5 * (np.log(2 * np.pi * var) + (yn - mean) ** 2 / var)
        b = b + s * x * yn
    return float(total)


def ridge_prediction(X, y, x_new, delta, sigma):
    F = X.shape[1]
    lhs = X.T @ X / sigma**2 + np.eye(F) / delta**2
    w = np.linalg.solve(lhs, X.T @ y / sigma**2)
    return x_new @ w


def prior_by_counting(z, i, j, k, K, alpha, beta):
    """Collapsed label prior for site (i, j) computed by recounting nested label lists."""
    n_ik = sum(1 for jj, lab in enumerate(z[i]) if jj != j and lab == k)
    n_i = sum(1 for jj in range(len(z[i])) if jj != j)
    n_k = sum(1 for ii, zi in enumerate(z) for jj, lab in enumerate(zi) if (ii, jj) != (i, j) and lab == k)
    n = sum(len(zi) for zi in z) - 1
    return (n_ik + beta * (n_k + alpha / K) / (n + alpha)) / (n_i + beta)


def site_conditional(entities, z, i, j, K, alpha, beta, delta, sigma):
    """p(z_ij = k | z_\\ij, data) for every k, by brute-force Gaussian evidence ratios."""
    logp = np.empty(K)
    Xe, ye = entities[i][j]
    for k in range(K):
        bg = [entities[a][b] for a, zi in enumerate(z) for b, lab in enumerate(zi)
              if lab == k and (a, b) != (i, j)]
        F = Xe.shape[1]
        X_bg = np.vstack([e[0] for e in bg]) if bg else np.zeros((0, F))
        y_bg = np.concatenate([e[1] for e in bg]) if bg else np.zeros(0)
        logp[k] = np.log(prior_by_counting(z, i, j, k, K, alpha, beta)) + marginal_ratio(
            X_bg, y_bg, Xe, ye, delta, sigma)
    p = np.exp(logp - logp.max())
    return p / p.sum()


def systematic_scan_stationary(entities, K, alpha, beta, delta, sigma):
    """Exact stationary law of one full Gibbs sweep over all label configurations.

    ``entities[i][j] = (X, y)``. Sites are visited in (i, j) order. Returns
    ``(configs, pi)`` where ``configs`` lists label tuples in flattened order.
    """
    sites = [(i, j) for i in range(len(entities)) for j in range(len(entities[i]))]
    configs = list(itertools.product(range(K), repeat=len(sites)))
    index = {cfg: n for n, cfg in enumerate(configs)}

    def nest(cfg):
        z, pos = [], 0
        for ents in entities:
            z.append(list(cfg[pos:pos + len(ents)]))
            pos += len(ents)
        return z

    P = np.eye(len(configs))
    for site_no, (i, j) in enumerate(sites):
        T = np.zeros((len(configs), len(configs)))
        for cfg in configs:
            cond = site_conditional(entities, nest(cfg), i, j, K, alpha, beta, delta, sigma)
            for k in range(K):
                nxt = list(cfg)
                nxt[site_no] = k
                T[index[cfg], index[tuple(nxt)]] += cond[k]
        P = P @ T
    vals, vecs = np.linalg.eig(P.T)
    pi = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return configs, pi / pi.sum()
