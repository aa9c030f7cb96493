"""Vectorized no-attack Monte Carlo of the estimation error and projected residual.

The applied command enters the plant, the estimator and the projector
identically, so it cancels from both ``e = x - x_hat`` and
``r_tilde = x_hat - x_tilde``; many runs can then be advanced as one array.
"""
import numpy as np


def simulate(model, gains, runs, k_stop, rng, record=()):
    """Returns ``{k: r_tilde samples (runs, 2n)}`` for each k in ``record``."""
    m = model.A.shape[0]
    A, C, L = model.A, model.C, gains.L
    ALC = A - L @ C
    cP = np.linalg.cholesky(gains.P)
    e = rng.standard_normal((runs, m)) @ cP.T
    rt = np.zeros((runs, m))
    out = {}
    for k in range(1, k_stop + 1):
        w = rng.standard_normal((runs, m)) @ model.chol_Q.T
        v = rng.standard_normal((runs, model.p)) @ model.chol_R.T
        rt = rt @ A.T + (e @ C.T + v) @ L.T
        e = e @ ALC.T + w - v @ L.T
        if k in record:
            out[k] = rt.copy()
    return out


def scores(rt, Sigma_k):
    c = np.linalg.cholesky(Sigma_k)
    s = np.linalg.solve(c, rt.T)
    return np.einsum("ij,ij->j", s, s)
