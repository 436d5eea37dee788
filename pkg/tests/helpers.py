"""Shared test oracles: quadrature, finite differences, random parameters."""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad
from scipy.special import expit

from u5surv.families import Family, SurvivalParams


def cumhaz_quadrature(params: SurvivalParams, a: float) -> float:
    """Integrate the hazard from 0 to ``a`` without using the closed form.

    The log-logistic hazard behaves like x^(1/sigma - 1) near zero, so the
    singular factor is handled with quad's algebraic endpoint weight.
    """
    if a == 0.0:
        return 0.0
    if params.family is Family.LOG_LOGISTIC:
        mu, sigma = params.mu, params.sigma
        beta = 1.0 / sigma

        def smooth_part(x):
            return (beta / mu**beta) / (1.0 + (x / mu) ** beta)

        import warnings

        with warnings.catch_warnings():
            # accuracy is asserted by the calling test, not by quad's own
            # convergence heuristic
            warnings.simplefilter("ignore")
            val, _ = quad(smooth_part, 0.0, a, weight="alg", wvar=(beta - 1.0, 0.0),
                          epsabs=1e-11, epsrel=1e-11, limit=300)
        return val
    a1, a2, a3 = params.alphas

    def h(x):
        if x <= 1.0:
            return a1 + a2 + a3
        if x <= 12.0:
            return a1 + a2
        return a1

    val, _ = quad(h, 0.0, a, points=[1.0, 12.0], epsabs=1e-13, limit=200)
    return val


def survival_quadrature(params: SurvivalParams, a: float) -> float:
    return float(np.exp(-cumhaz_quadrature(params, a)))


def riemann_band_integral(params: SurvivalParams, a: float, b: float,
                          n: int = 1_000_000) -> float:
    """Midpoint Riemann sum of S over (a, b); brute-force oracle."""
    from u5surv.families import survival

    x = np.linspace(a, b, n + 1)
    mid = 0.5 * (x[:-1] + x[1:])
    return float(np.sum(survival(params, mid)) * (b - a) / n)


def fd_gradient(f, x, h_rel: float = 1e-5) -> np.ndarray:
    """Central finite differences with per-coordinate relative step."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        h = h_rel * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def fd_hessian(f, x, h_rel: float = 1e-4) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.zeros((n, n))
    for j in range(n):
        h = h_rel * max(1.0, abs(x[j]))

        def g_at(xj):
            xx = x.copy()
            xx[j] = xj
            return fd_gradient(f, xx, h_rel)

        H[:, j] = (g_at(x[j] + h) - g_at(x[j] - h)) / (2.0 * h)
    return 0.5 * (H + H.T)


def rel_err(a, b, floor: float = 1.0) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def random_params(rng: np.random.Generator, family: Family) -> SurvivalParams:
    """Valid parameters spanning a wide plausible mortality range."""
    if family is Family.LOG_LOGISTIC:
        theta = np.array([rng.uniform(4.0, 16.0), rng.uniform(-2.5, 2.5)])
    else:
        theta = rng.uniform(-10.0, -3.0, size=3)
    return SurvivalParams(family, theta)


def expit_(x):
    return expit(x)
