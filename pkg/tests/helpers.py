"""Shared oracles for the test suite.

These deliberately avoid the library's whitened/log-sum-exp code paths:
densities come from a dense matrix inverse and a plain sum of exponentials
in extended precision, distances from an explicit double loop.
"""

import numpy as np


def naive_log_density(kde, queries: np.ndarray) -> np.ndarray:
    """Direct sum of Gaussian pdfs in extended precision via a dense inverse."""
    cov = kde.bandwidth_**2 * kde.covariance_
    inv = np.linalg.inv(cov).astype(np.longdouble)
    _, logdet = np.linalg.slogdet(cov)
    d = kde.support_.shape[1]
    log_norm = -0.5 * (d * np.log(np.longdouble(2.0) * np.pi) + np.longdouble(logdet))
    sup = kde.support_.astype(np.longdouble)
    q = np.asarray(queries, dtype=np.longdouble)
    delta = q[:, None, :] - sup[None, :, :]
    m = np.einsum("qmd,de,qme->qm", delta, inv, delta)
    dens = np.exp(log_norm - m / 2.0).sum(axis=1) / sup.shape[0]
    return np.log(dens).astype(np.float64)


def brute_force_min_sq_dists(prior: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimum squared distance per prior row, by explicit double loop."""
    out = np.empty(prior.shape[0])
    for i in range(prior.shape[0]):
        best = np.inf
        for j in range(target.shape[0]):
            diff = prior[i] - target[j]
            best = min(best, float(np.sum(diff**2)))
        out[i] = best
    return out


def ranking(values: np.ndarray) -> np.ndarray:
    """Indices ordered by descending value, ties broken by ascending index."""
    return np.lexsort((np.arange(len(values)), -np.asarray(values)))
