"""Clustering and regression metrics."""
import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score


def contingency(pred, truth, K=None):
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    size = max(int(pred.max(initial=-1)), int(truth.max(initial=-1))) + 1
    if K is not None:
        size = max(size, K)
    table = np.zeros((size, size), dtype=np.int64)
    np.add.at(table, (pred, truth), 1)
    return table


def best_permutation_accuracy(pred, truth, K=None):
    """Fraction of matches under the relabeling of ``pred`` that maximizes agreement."""
    table = contingency(pred, truth, K)
    if table.sum() == 0:
        return float("nan")
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / table.sum())


def adjusted_rand_index(pred, truth):
    return float(adjusted_rand_score(truth, pred))


def mse(y, y_hat):
    r = np.asarray(y, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64)
    return float(np.mean(r * r)) if r.size else float("nan")
