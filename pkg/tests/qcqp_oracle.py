"""Accelerated projected gradient for the single-ellipsoid QCQP, used as an oracle."""
import numpy as np
from scipy.optimize import brentq

from fdialab.qcqp import QcqpProblem


class Ellipsoid:
    """``{x : x^T Q x + b^T x + c <= 0}`` for positive definite Q, as ``(x-xc)^T Q (x-xc) <= rho``."""

    def __init__(self, Q, b, c):
        self.lam, self.V = np.linalg.eigh(Q)
        self.xc = -0.5 * np.linalg.solve(Q, b)
        self.rho = float(self.xc @ Q @ self.xc - c)
        if self.rho < 0:
            raise ValueError("empty ellipsoid")

    def project(self, y):
        yh = self.V.T @ (y - self.xc)
        lam = self.lam
        if lam @ yh**2 <= self.rho:
            return y

        def excess(mu):
            return float(lam @ (yh / (1 + 2 * mu * lam)) ** 2) - self.rho

        hi = 1.0
        while excess(hi) > 0:
            hi *= 2
        mu = brentq(excess, 0.0, hi, xtol=1e-16, rtol=1e-15, maxiter=500)
        return self.xc + self.V @ (yh / (1 + 2 * mu * lam))


def sample_inside(E, rng, count):
    """Uniform samples from the ellipsoid (ball samples pushed through its affine map)."""
    n = E.lam.size
    u = rng.standard_normal((count, n))
    u *= (rng.uniform(size=(count, 1)) ** (1.0 / n)) / np.linalg.norm(u, axis=1, keepdims=True)
    return E.xc + (u * np.sqrt(E.rho / E.lam)) @ E.V.T


def projected_gradient(prob: QcqpProblem, iters=20_000, tol=1e-14):
    """FISTA with gradient restart from the ellipsoid centre."""
    E = Ellipsoid(prob.Qc, prob.q_lin, prob.c0)
    step = 1.0 / np.linalg.eigvalsh(prob.H)[-1]
    x = E.project(E.xc)
    y, t = x.copy(), 1.0
    for _ in range(iters):
        x_new = E.project(y - step * (prob.H @ y + prob.g))
        if (x_new - x) @ (prob.H @ y + prob.g) > 0:   # restart on non-descent
            t = 1.0
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = x_new + (t - 1) / t_new * (x_new - x)
        done = np.linalg.norm(x_new - x) <= tol * max(1.0, np.linalg.norm(x))
        x, t = x_new, t_new
        if done:
            break
    return x


def random_problem(rng, n=7, active=None):
    """Random strictly convex instance with a non-empty ellipsoid; ``active`` picks the regime."""
    A = rng.standard_normal((n, n))
    H = A @ A.T / n + 0.2 * np.eye(n)
    B = rng.standard_normal((n, n))
    Qc = B @ B.T / n + 0.1 * np.eye(n)
    xc = rng.standard_normal(n)
    rho = float(rng.uniform(0.2, 2.0))
    b = -2 * Qc @ xc
    c0 = float(xc @ Qc @ xc - rho)
    x_u = xc + rng.standard_normal(n) * (0.1 if active is False else 3.0)
    if active is False:
        # pull the unconstrained minimizer inside the ellipsoid
        d = x_u - xc
        x_u = xc + d * min(1.0, 0.5 * np.sqrt(rho / (d @ Qc @ d)))
    g = -H @ x_u
    return QcqpProblem(H, g, Qc, b, c0)
