"""Special-function kernels: real-order Bessel J, Jacobi polynomials and
Gauss-Legendre rules.

``bessel_j`` is vectorised over the argument and scalar in the order. Three
regimes are used:

* ascending power series for ``x <= 5``;
* Hankel's large-argument expansion for the fractional base orders followed
  by upward recurrence in the order, when ``x >= max(25, 1.5*mu)``;
* Miller's downward recurrence normalised by the Neumann sum
  ``(x/2)**nu = sum_k (nu + 2k) Gamma(nu + k) / k! J_{nu+2k}(x)`` in between.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SERIES_MAX = 5.0
HANKEL_MIN = 25.0
HANKEL_ORDER_FACTOR = 1.5

_RESCALE = 1e200


def _check_order(mu: float) -> float:
    mu = float(mu)
    if not mu >= 0.0:
        raise ValueError(f"Bessel order must be non-negative, got {mu}")
    return mu


def _series(mu: float, x: np.ndarray, prefactor: np.ndarray) -> np.ndarray:
    """sum_k (-1)^k (x/2)^{2k} / (k! (mu+1)_k), times ``prefactor``."""
    q = -0.25 * x * x
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, 200):
        term = term * q / (k * (mu + k))
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return prefactor * total


def _hankel(nu: float, x: np.ndarray) -> np.ndarray:
    """Hankel asymptotic expansion, valid for x >= HANKEL_MIN and small nu."""
    four_nu2 = 4.0 * nu * nu
    p = np.ones_like(x)
    q = np.zeros_like(x)
    coef = 1.0
    prev = np.full_like(x, np.inf)
    live = np.ones(x.shape, dtype=bool)
    inv8x = 1.0 / (8.0 * x)
    term = np.ones_like(x)
    for k in range(1, 80):
        coef = (four_nu2 - (2 * k - 1) ** 2) / k
        term = term * coef * inv8x
        mag = np.abs(term)
        live &= mag < prev
        if not live.any():
            break
        t = np.where(live, term, 0.0)
        # odd k feeds Q, even k feeds P, with alternating signs
        if k % 2 == 1:
            q += t if (k // 2) % 2 == 0 else -t
        else:
            p += -t if (k // 2) % 2 == 1 else t
        prev = mag
        live &= mag > 1e-17
    omega = x - (0.5 * nu + 0.25) * math.pi
    return np.sqrt(2.0 / (math.pi * x)) * (p * np.cos(omega) - q * np.sin(omega))


def _upward(nu0: float, steps: int, x: np.ndarray) -> np.ndarray:
    j_prev = _hankel(nu0, x)
    if steps == 0:
        return j_prev
    j_cur = _hankel(nu0 + 1.0, x)
    for k in range(1, steps):
        nu = nu0 + k
        j_prev, j_cur = j_cur, (2.0 * nu / x) * j_cur - j_prev
    return j_cur


def _neumann_coefficients(nu0: float, count: int) -> np.ndarray:
    c = np.empty(count)
    c[0] = math.gamma(nu0 + 1.0)
    g = math.gamma(nu0 + 1.0)  # Gamma(nu0 + j) / j! at j = 1
    for j in range(1, count):
        if j > 1:
            g *= (nu0 + j - 1) / j
        c[j] = (nu0 + 2 * j) * g
    return c


def _miller(mu: float, x: np.ndarray) -> np.ndarray:
    nu0 = mu - math.floor(mu)
    target = int(round(mu - nu0))
    xmax = float(x.max())
    top = int(math.ceil(max(xmax, mu))) + 40 + int(math.ceil(6.0 * xmax ** (1.0 / 3.0)))
    coeffs = _neumann_coefficients(nu0, top // 2 + 2)
    f_next = np.zeros_like(x)
    f_cur = np.full_like(x, 1e-30)
    norm = np.zeros_like(x)
    result = np.zeros_like(x)
    for k in range(top, -1, -1):
        # f_cur holds the (unnormalised) order nu0 + k value here
        if k % 2 == 0:
            norm += coeffs[k // 2] * f_cur
        if k == target:
            result = f_cur.copy()
        if k == 0:
            break
        f_prev = (2.0 * (nu0 + k) / x) * f_cur - f_next
        f_next, f_cur = f_cur, f_prev
        big = np.abs(f_cur) > _RESCALE
        if big.any():
            s = np.where(big, 1.0 / _RESCALE, 1.0)
            f_cur *= s
            f_next *= s
            norm *= s
            result *= s
    return result * np.power(0.5 * x, nu0) / norm


def bessel_j(mu: float, x):
    """Bessel function of the first kind J_mu(x) for real mu >= 0, x >= 0.

    Parameters
    ----------
    mu : float
        Order.
    x : float or array_like
        Argument(s).

    Returns
    -------
    float or ndarray
        Same shape as ``x``.
    """
    mu = _check_order(mu)
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(np.isnan(xa)):
        raise ValueError("Bessel argument must be non-negative")
    flat = xa.ravel()
    out = np.empty_like(flat)

    zero = flat == 0.0
    out[zero] = 1.0 if mu == 0.0 else 0.0

    ser = (~zero) & (flat <= SERIES_MAX)
    if ser.any():
        xs = flat[ser]
        pre = np.exp(mu * np.log(0.5 * xs) - math.lgamma(mu + 1.0))
        out[ser] = _series(mu, xs, pre)

    hank = (flat > SERIES_MAX) & (flat >= max(HANKEL_MIN, HANKEL_ORDER_FACTOR * mu))
    if hank.any():
        nu0 = mu - math.floor(mu)
        out[hank] = _upward(nu0, int(round(mu - nu0)), flat[hank])

    mid = (flat > SERIES_MAX) & ~hank
    if mid.any():
        out[mid] = _miller(mu, flat[mid])

    out = out.reshape(xa.shape)
    return float(out) if out.ndim == 0 else out


def scaled_bessel(mu: float, y):
    """y**-0.5 * J_mu(y), bounded on [0, inf) for mu >= 1/2.

    At ``y = 0`` this is ``sqrt(2/pi)`` for ``mu = 1/2`` and zero above.
    """
    mu = _check_order(mu)
    if mu < 0.5:
        raise ValueError(f"scaled_bessel needs mu >= 1/2, got {mu}")
    ya = np.asarray(y, dtype=float)
    if np.any(ya < 0):
        raise ValueError("argument must be non-negative")
    flat = ya.ravel()
    out = np.empty_like(flat)
    small = flat <= SERIES_MAX
    if small.any():
        ys = flat[small]
        # (y/2)^mu / Gamma(mu+1) / sqrt(y) without forming 0 * inf
        if mu > 0.5:
            with np.errstate(divide="ignore"):
                pre = np.exp((mu - 0.5) * np.log(ys) - mu * math.log(2.0) - math.lgamma(mu + 1.0))
        else:
            pre = np.full_like(ys, math.exp(-0.5 * math.log(2.0) - math.lgamma(1.5)))
        out[small] = _series(mu, ys, pre)
    big = ~small
    if big.any():
        yb = flat[big]
        out[big] = bessel_j(mu, yb) / np.sqrt(yb)
    out = out.reshape(ya.shape)
    return float(out) if out.ndim == 0 else out


def jacobi_polynomial(k: int, alpha: float, beta: float, xi):
    """Jacobi polynomial P_k^(alpha, beta)(xi) by the three-term recurrence.

    Standard normalisation, ``P_k(1) = binom(k + alpha, k)``.
    """
    if k < 0:
        raise ValueError("degree must be non-negative")
    x = np.asarray(xi, dtype=float)
    p0 = np.ones_like(x)
    if k == 0:
        return float(p0) if p0.ndim == 0 else p0
    ab = alpha + beta
    p1 = 0.5 * (alpha - beta) + 0.5 * (ab + 2.0) * x
    for j in range(2, k + 1):
        s = 2 * j + ab
        a1 = 2.0 * j * (j + ab) * (s - 2.0)
        a2 = (s - 1.0) * (alpha * alpha - beta * beta)
        a3 = (s - 2.0) * (s - 1.0) * s
        a4 = 2.0 * (j + alpha - 1.0) * (j + beta - 1.0) * s
        p0, p1 = p1, ((a2 + a3 * x) * p1 - a4 * p0) / a1
    return float(p1) if p1.ndim == 0 else p1


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    interval: tuple[float, float]

    def integrate(self, values) -> complex | float:
        """Weighted sum over the last axis of ``values`` sampled at the nodes."""
        return np.tensordot(np.asarray(values), self.weights, axes=([-1], [0]))


def gauss_legendre(npts: int, a: float, b: float) -> QuadratureRule:
    if npts < 1:
        raise ValueError("need at least one node")
    if not a < b:
        raise ValueError("need a < b")
    t, w = np.polynomial.legendre.leggauss(npts)
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b) + half * t
    weights = half * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, (float(a), float(b)))


def composite_gauss_legendre(edges, npts: int) -> QuadratureRule:
    """Gauss-Legendre panels between consecutive ``edges``."""
    edges = np.asarray(edges, dtype=float)
    t, w = np.polynomial.legendre.leggauss(npts)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (lo + hi) + half * t).ravel()
    weights = (half * w).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, (float(edges[0]), float(edges[-1])))
