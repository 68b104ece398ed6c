"""Spectral representation of the monopole Hamiltonian.

Sections are finite sums ``coeff * psi(|x|) * Y_{n,l,m}(x/|x|)`` where the
radial factor is given through its Fourier-Bessel transform

    psi(r) = int_0^inf (kr)^{-1/2} J_mu(kr) psi#(k) k^2 dk,
    mu^2 = l(l+1) - n^2 + 1/4,

and ``psi#`` is a smooth bump supported in ``[k_lo, k_hi]``.  In this
representation ``H`` multiplies ``psi#`` by ``k^2/2`` and ``exp(-tH)``
multiplies it by ``exp(-k^2 t/2)``; both are kept symbolically on the profile
(``energy_power`` and ``heat_time``) so repeated application stays exact.

Monopole harmonics are evaluated through their Cartesian factorisation so that
the value is smooth across the pole contained in each chart:

    chart PLUS :  ((x1 + i s x2)/r)^{|n+m|} (1 + xi)^{(|n-m| - |n+m|)/2} P_k^{(a,b)}(xi)
    chart MINUS:  ((x1 + i s' x2)/r)^{|n-m|} (1 - xi)^{(|n+m| - |n-m|)/2} P_k^{(a,b)}(xi)

with ``xi = x3/r``, ``a = |n+m|``, ``b = |n-m|``, ``k = l - max(|n|, |m|)`` and
``s, s'`` the signs of ``m+n`` and ``m-n``.  In polar coordinates these are
``(1-xi)^{a/2} (1+xi)^{b/2} P_k^{(a,b)}(xi)`` times ``exp(i(m+n) phi)`` in PLUS
and ``exp(i(m-n) phi)`` in MINUS, so the charts differ by ``exp(2 i n phi)``.
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .geometry import (
    ChartAtlas,
    ChartError,
    ChartId,
    FiberValue,
    MINUS,
    PLUS,
    chart_contains,
    connection_components,
)
from .special import (
    QuadratureRule,
    composite_gauss_legendre,
    gauss_legendre,
    jacobi_polynomial,
    scaled_bessel,
)

K_NODES = 256
R_MIN = 1e-6
R_MAX = 1e3
R_PANEL_NODES = 16
R_PANEL_WIDTH = 2.0
# product (k_hi - k_lo) * r above which one 256-point k rule under-resolves
_K_OSC_BUDGET = 200.0


@dataclass(frozen=True)
class AngularMode:
    n: int
    ell: int
    m: int

    def __post_init__(self):
        if self.ell < abs(self.n):
            raise ValueError(f"need ell >= |n|, got ell={self.ell}, n={self.n}")
        if abs(self.m) > self.ell:
            raise ValueError(f"need |m| <= ell, got m={self.m}, ell={self.ell}")

    @property
    def mu(self) -> float:
        return mu_of(self)


def mu_of(mode: AngularMode) -> float:
    """Bessel order of the radial problem for ``mode``."""
    return math.sqrt(mode.ell * (mode.ell + 1) - mode.n * mode.n + 0.25)


# --------------------------------------------------------------------------
# monopole harmonics


def _polar_part(mode: AngularMode, xi):
    a = abs(mode.n + mode.m)
    b = abs(mode.n - mode.m)
    k = mode.ell - max(abs(mode.n), abs(mode.m))
    return a, b, k


@dataclass(frozen=True)
class HarmonicTable:
    """Normalised monopole harmonic Y_{n,l,m}.

    ``normalization`` makes the integral of |Y|^2 over the unit sphere one; it
    is computed by Gauss-Legendre quadrature in ``xi = cos(theta)``, which is
    exact here because |Y|^2 is a polynomial of degree 2l in ``xi``.
    """

    mode: AngularMode
    normalization: float = field(init=False)

    def __post_init__(self):
        a, b, k = _polar_part(self.mode, None)
        rule = gauss_legendre(self.mode.ell + 2, -1.0, 1.0)
        xi = rule.nodes
        f = (1 - xi) ** (0.5 * a) * (1 + xi) ** (0.5 * b) * jacobi_polynomial(k, a, b, xi)
        norm2 = 2.0 * math.pi * rule.integrate(f * f)
        object.__setattr__(self, "normalization", 1.0 / math.sqrt(norm2))

    def polar(self, xi):
        """Real theta-profile (1-xi)^{a/2} (1+xi)^{b/2} P_k(xi), normalised."""
        a, b, k = _polar_part(self.mode, xi)
        xi = np.asarray(xi, dtype=float)
        return self.normalization * (1 - xi) ** (0.5 * a) * (1 + xi) ** (0.5 * b) * jacobi_polynomial(k, a, b, xi)


@functools.lru_cache(maxsize=None)
def harmonic_table(mode: AngularMode) -> HarmonicTable:
    return HarmonicTable(mode)


def harmonic_eval(table: HarmonicTable, chart: ChartId, u, atlas: ChartAtlas | None = None):
    """Value of Y_{n,l,m} at direction(s) ``u`` in the trivialisation ``chart``.

    ``u`` need not be normalised; only its direction is used.  When ``atlas``
    is given the points are checked to lie in the chart.
    """
    u = np.asarray(u, dtype=float)
    if atlas is not None and not np.all(chart_contains(atlas, chart, u)):
        raise ChartError(f"direction(s) outside chart {chart.value}")
    mode = table.mode
    n, m = mode.n, mode.m
    a, b, k = _polar_part(mode, None)
    r = np.sqrt(np.einsum("...i,...i->...", u, u))
    x1, x2, xi = u[..., 0] / r, u[..., 1] / r, u[..., 2] / r
    poly = jacobi_polynomial(k, a, b, xi)
    if chart is PLUS:
        s = m + n
        ang = (x1 + 1j * math.copysign(1.0, s) * x2) ** abs(s)
        pole = (1 + xi) ** (0.5 * (b - a))
    else:
        s = m - n
        ang = (x1 + 1j * math.copysign(1.0, s) * x2) ** abs(s)
        pole = (1 - xi) ** (0.5 * (a - b))
    out = table.normalization * ang * pole * poly
    return complex(out) if np.ndim(out) == 0 else out


def sphere_inner_product(t1: HarmonicTable, t2: HarmonicTable, n_xi: int = 32, n_phi: int = 64) -> complex:
    """<Y1, Y2> on the unit sphere by Gauss-Legendre in xi times trapezoid in phi.

    Evaluated in chart PLUS; the south pole is a single point and carries no
    quadrature weight, and the chart-PLUS form is finite up to it.
    """
    rule = gauss_legendre(n_xi, -1.0, 1.0)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    xi, ph = np.meshgrid(rule.nodes, phi, indexing="ij")
    s = np.sqrt(1 - xi * xi)
    pts = np.stack([s * np.cos(ph), s * np.sin(ph), xi], axis=-1)
    y1 = harmonic_eval(t1, PLUS, pts)
    y2 = harmonic_eval(t2, PLUS, pts)
    integrand = np.conj(y1) * y2
    return complex(rule.integrate(integrand.mean(axis=1) * 2.0 * math.pi))


def _sph(theta, phi):
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def angular_momentum_residuals(table: HarmonicTable, chart: ChartId, u, h_fd: float = 1e-4):
    """Finite-difference residuals of the two eigenvalue equations.

    Returns ``(r2, r3)`` with ``r2 = |L^2 Y - l(l+1) Y|`` and
    ``r3 = |L_3 Y - m Y|``; the angular momentum operators in the chart
    trivialisation are

        L1 = i (sin phi d_theta + cot theta cos phi d_phi) - n cos phi (1 -+ cos theta)/sin theta
        L2 = i (-cos phi d_theta + cot theta sin phi d_phi) - n sin phi (1 -+ cos theta)/sin theta
        L3 = -i d_phi -+ n

    (upper sign for PLUS) applied by nested central differences in (theta, phi).
    """
    u = np.asarray(u, dtype=float)
    r = float(np.linalg.norm(u))
    theta = math.acos(u[2] / r)
    phi = math.atan2(u[1], u[0])
    n = table.mode.n
    sg = chart.sign

    def Y(th, ph):
        return harmonic_eval(table, chart, _sph(th, ph))

    def d_theta(f):
        return lambda th, ph: (f(th + h_fd, ph) - f(th - h_fd, ph)) / (2 * h_fd)

    def d_phi(f):
        return lambda th, ph: (f(th, ph + h_fd) - f(th, ph - h_fd)) / (2 * h_fd)

    def L1(f):
        ft, fp = d_theta(f), d_phi(f)
        return lambda th, ph: (
            1j * (math.sin(ph) * ft(th, ph) + math.cos(ph) / math.tan(th) * fp(th, ph))
            - n * math.cos(ph) * (1 - sg * math.cos(th)) / math.sin(th) * f(th, ph)
        )

    def L2(f):
        ft, fp = d_theta(f), d_phi(f)
        return lambda th, ph: (
            1j * (-math.cos(ph) * ft(th, ph) + math.sin(ph) / math.tan(th) * fp(th, ph))
            - n * math.sin(ph) * (1 - sg * math.cos(th)) / math.sin(th) * f(th, ph)
        )

    def L3(f):
        fp = d_phi(f)
        return lambda th, ph: -1j * fp(th, ph) - sg * n * f(th, ph)

    y = Y(theta, phi)
    l2y = L1(L1(Y))(theta, phi) + L2(L2(Y))(theta, phi) + L3(L3(Y))(theta, phi)
    l3y = L3(Y)(theta, phi)
    ell, m = table.mode.ell, table.mode.m
    return abs(l2y - ell * (ell + 1) * y), abs(l3y - m * y)


# --------------------------------------------------------------------------
# radial profiles and the Fourier-Bessel transform


def _bump(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


@dataclass(frozen=True)
class RadialProfile:
    """Spectrum ``psi#(k) = amplitude * bump(k) * (k^2/2)^energy_power * exp(-k^2 heat_time/2)``.

    ``bump`` is ``exp(-1/(1-u^2))`` with ``u`` the affine image of
    ``[k_lo, k_hi]`` onto ``[-1, 1]``, and zero outside.
    """

    k_lo: float
    k_hi: float
    amplitude: float = 1.0
    kind: str = "smooth_bump"
    heat_time: float = 0.0
    energy_power: int = 0

    def __post_init__(self):
        if self.kind != "smooth_bump":
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if not 0.0 < self.k_lo < self.k_hi:
            raise ValueError("need 0 < k_lo < k_hi")

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        u = (2.0 * k - self.k_lo - self.k_hi) / (self.k_hi - self.k_lo)
        val = self.amplitude * _bump(u)
        if self.energy_power:
            val = val * (0.5 * k * k) ** self.energy_power
        if self.heat_time:
            val = val * np.exp(-0.5 * k * k * self.heat_time)
        return val

    def k_rule(self, r_max: float = 0.0) -> QuadratureRule:
        """k quadrature on the support, refined when ``r_max`` makes the
        kernel oscillate faster than one 256-point rule resolves."""
        width = self.k_hi - self.k_lo
        panels = max(1, math.ceil(width * r_max / _K_OSC_BUDGET))
        if panels == 1:
            return gauss_legendre(K_NODES, self.k_lo, self.k_hi)
        return composite_gauss_legendre(np.linspace(self.k_lo, self.k_hi, panels + 1), K_NODES)


def default_r_rule(r_min: float = R_MIN, r_max: float = R_MAX) -> QuadratureRule:
    """Composite Gauss-Legendre on [r_min, r_max].

    Panels are geometric (density ~ 1/r) below r = 1 and of fixed width above,
    where the integrand oscillates at a rate set by k rather than r.
    """
    geo = np.geomspace(r_min, min(1.0, r_max), max(2, int(math.ceil(math.log2(min(1.0, r_max) / r_min))) + 1))
    edges = [geo]
    if r_max > 1.0:
        n_lin = max(1, int(math.ceil((r_max - 1.0) / R_PANEL_WIDTH)))
        edges.append(np.linspace(1.0, r_max, n_lin + 1)[1:])
    return composite_gauss_legendre(np.concatenate(edges), R_PANEL_NODES)


_default_r_rule = functools.lru_cache(maxsize=None)(default_r_rule)


def fourier_bessel_inverse(spectrum, mu: float, r, k_rule: QuadratureRule | None = None):
    """psi(r) = int (kr)^{-1/2} J_mu(kr) psi#(k) k^2 dk.

    ``spectrum`` is a ``RadialProfile`` (or any callable of k together with an
    explicit ``k_rule``).  Vectorised over ``r``.
    """
    r = np.asarray(r, dtype=float)
    flat = r.ravel()
    out = np.zeros(flat.shape, dtype=float)
    if flat.size == 0:
        return out.reshape(r.shape)
    if k_rule is not None:
        groups = [(np.arange(flat.size), k_rule)]
    else:
        # bucket points by the k resolution they need
        width = spectrum.k_hi - spectrum.k_lo
        level = np.maximum(1, np.ceil(width * flat / _K_OSC_BUDGET)).astype(int)
        groups = []
        for lv in np.unique(level):
            idx = np.nonzero(level == lv)[0]
            groups.append((idx, spectrum.k_rule(float(flat[idx].max()))))
    for idx, rule in groups:
        k = rule.nodes
        wk = rule.weights * np.asarray(spectrum(k)) * k * k
        # chunk to bound the (r, k) kernel matrix
        step = max(1, 2_000_000 // k.size)
        for s in range(0, idx.size, step):
            sub = idx[s:s + step]
            kernel = scaled_bessel(mu, np.outer(flat[sub], k))
            out[sub] = kernel @ wk
    return out.reshape(r.shape)


def fourier_bessel_forward(profile: Callable, mu: float, k_grid, r_rule: QuadratureRule | None = None,
                           tail_budget: float = 1e-12):
    """psi#(k) = int (kr)^{-1/2} J_mu(kr) psi(r) r^2 dr on ``k_grid``.

    ``profile`` maps an array of radii to (possibly complex) values.  A
    ``RuntimeWarning`` is issued when ``|psi|^2 r^2`` at the outer edge of the
    window exceeds ``tail_budget`` times its integral.
    """
    rule = r_rule or _default_r_rule()
    r = rule.nodes
    vals = np.asarray(profile(r))
    dens = np.abs(vals) ** 2 * r * r
    total = float(rule.integrate(dens))
    edge = float(np.max(dens[-R_PANEL_NODES:])) * (rule.interval[1] - rule.interval[0]) * 1e-3
    if total > 0 and edge > tail_budget * total:
        warnings.warn(
            f"radial window truncation tail {edge / total:.2e} exceeds budget {tail_budget:.1e}",
            RuntimeWarning,
            stacklevel=2,
        )
    k = np.asarray(k_grid, dtype=float)
    flat = k.ravel()
    weighted = rule.weights * vals * r * r
    out = np.empty(flat.shape, dtype=np.result_type(vals, float))
    step = max(1, 2_000_000 // r.size)
    for s in range(0, flat.size, step):
        kernel = scaled_bessel(mu, np.outer(flat[s:s + step], r))
        out[s:s + step] = kernel @ weighted
    return out.reshape(k.shape)


def radial_norm2(profile: RadialProfile) -> float:
    """int |psi#|^2 k^2 dk, equal to int |psi|^2 r^2 dr."""
    rule = profile.k_rule()
    k = rule.nodes
    return float(rule.integrate(np.abs(profile(k)) ** 2 * k * k))


def radial_eigen_residual(mu: float, k: float, r: float, h: float = 1e-3) -> float:
    """Relative residual of h_l f = k^2/2 f for f(r) = (kr)^{-1/2} J_mu(kr).

    ``h_l = (-d^2/dr^2 - (2/r) d/dr + (mu^2 - 1/4)/r^2)/2`` with derivatives by
    fourth-order central differences.
    """
    rs = r + h * np.arange(-2, 3)
    f = scaled_bessel(mu, k * rs)
    d1 = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * h)
    d2 = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * h * h)
    hf = 0.5 * (-d2 - 2.0 * d1 / r + (mu * mu - 0.25) / (r * r) * f[2])
    target = 0.5 * k * k * f[2]
    return abs(hf - target) / abs(target)


# --------------------------------------------------------------------------
# sections of the domain D


@dataclass(frozen=True)
class SectionTerm:
    coeff: complex
    mode: AngularMode
    profile: RadialProfile


@dataclass(frozen=True)
class SectionInD:
    """Finite sum of ``coeff * psi(|x|) * Y_mode(x/|x|)`` with a common charge."""

    n: int
    terms: tuple[SectionTerm, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if t.mode.n != self.n:
                raise ValueError("all modes of a section must share the charge n")

    @classmethod
    def single(cls, n: int, ell: int, m: int, k_lo: float, k_hi: float,
               amplitude: float = 1.0, coeff: complex = 1.0) -> "SectionInD":
        return cls(n, (SectionTerm(complex(coeff), AngularMode(n, ell, m), RadialProfile(k_lo, k_hi, amplitude)),))

    def map_profiles(self, fn) -> "SectionInD":
        return SectionInD(self.n, tuple(replace(t, profile=fn(t.profile)) for t in self.terms))

    def norm(self) -> float:
        """L^2 norm; distinct modes are orthogonal, equal modes add coherently."""
        groups: dict = {}
        for t in self.terms:
            groups.setdefault(t.mode, []).append(t)
        total = 0.0
        for ts in groups.values():
            lo = min(t.profile.k_lo for t in ts)
            hi = max(t.profile.k_hi for t in ts)
            rule = gauss_legendre(K_NODES * len(ts), lo, hi)
            k = rule.nodes
            spec = sum(t.coeff * t.profile(k) for t in ts)
            total += float(rule.integrate(np.abs(spec) ** 2 * k * k))
        return math.sqrt(total)

    # JSON interface ------------------------------------------------------
    def to_json(self) -> dict:
        # the schema has no slot for an applied semigroup or power of H
        if any(t.profile.heat_time or t.profile.energy_power for t in self.terms):
            raise ValueError("only plain bump sections can be serialised")
        return {
            "n": self.n,
            "terms": [
                {
                    "re": float(complex(t.coeff).real),
                    "im": float(complex(t.coeff).imag),
                    "ell": t.mode.ell,
                    "m": t.mode.m,
                    "k_lo": t.profile.k_lo,
                    "k_hi": t.profile.k_hi,
                    "amplitude": t.profile.amplitude,
                }
                for t in self.terms
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SectionInD":
        n = int(data["n"])
        terms = []
        for item in data["terms"]:
            terms.append(
                SectionTerm(
                    complex(float(item.get("re", 0.0)), float(item.get("im", 0.0))),
                    AngularMode(n, int(item["ell"]), int(item["m"])),
                    RadialProfile(float(item["k_lo"]), float(item["k_hi"]), float(item.get("amplitude", 1.0))),
                )
            )
        return cls(n, tuple(terms))


def semigroup_apply(section: SectionInD, t: float) -> SectionInD:
    """exp(-tH) on a section: each spectrum gains the factor exp(-k^2 t/2)."""
    if t < 0:
        raise ValueError("the heat semigroup is only defined for t >= 0")
    if t == 0:
        return section
    return section.map_profiles(lambda p: replace(p, heat_time=p.heat_time + t))


def hamiltonian_apply(section: SectionInD) -> SectionInD:
    """H on a section: each spectrum gains the factor k^2/2."""
    return section.map_profiles(lambda p: replace(p, energy_power=p.energy_power + 1))


def section_values(section: SectionInD, x, chart: ChartId, atlas: ChartAtlas | None = None):
    """Chart-``chart`` coordinates of the section at point(s) ``x`` (shape (..., 3))."""
    x = np.asarray(x, dtype=float)
    if atlas is not None and not np.all(chart_contains(atlas, chart, x)):
        raise ChartError(f"point(s) outside chart {chart.value}")
    r = np.sqrt(np.einsum("...i,...i->...", x, x))
    if np.any(r == 0):
        raise ValueError("sections are not evaluated at the origin")
    out = np.zeros(r.shape, dtype=complex)
    radial_cache: dict = {}
    for term in section.terms:
        key = (term.profile, term.mode.ell)
        if key not in radial_cache:
            radial_cache[key] = fourier_bessel_inverse(term.profile, mu_of(term.mode), r)
        out = out + term.coeff * radial_cache[key] * harmonic_eval(harmonic_table(term.mode), chart, x)
    return out


def section_eval(section: SectionInD, x, chart: ChartId, atlas: ChartAtlas | None = None) -> FiberValue:
    """Value of the section at a single point, tagged with its chart."""
    if atlas is None:
        atlas = ChartAtlas(section.n)
    val = section_values(section, np.asarray(x, dtype=float), chart, atlas)
    return FiberValue(chart, complex(val))


def covariant_derivative_fd(section: SectionInD, x, chart: ChartId, direction: int, h_fd: float = 1e-4) -> complex:
    """(d_k - i A_k) applied to the chart representation by central differences."""
    x = np.asarray(x, dtype=float)
    e = np.zeros(3)
    e[direction] = h_fd
    vals = section_values(section, np.stack([x - e, x, x + e]), chart)
    a = connection_components(section.n, chart, x)[direction]
    return complex((vals[2] - vals[0]) / (2 * h_fd) - 1j * a * vals[1])


def covariant_laplacian_fd(section: SectionInD, x, chart: ChartId, h_fd: float = 1e-3) -> complex:
    """sum_k nabla_k nabla_k of the section at ``x`` by nested central differences."""
    x = np.asarray(x, dtype=float)
    offsets = np.array([-2, -1, 0, 1, 2])
    pts = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h_fd
        pts.append(x + offsets[:, None] * e)
    pts = np.concatenate(pts)
    vals = section_values(section, pts, chart).reshape(3, 5)
    a = connection_components(section.n, chart, pts)
    total = 0.0 + 0.0j
    for k in range(3):
        v = vals[k]
        ak = a[5 * k:5 * k + 5, k]
        # first covariant derivative at offsets -1, 0, +1
        g = np.array([(v[j + 1] - v[j - 1]) / (2 * h_fd) - 1j * ak[j] * v[j] for j in (1, 2, 3)])
        total += (g[2] - g[0]) / (2 * h_fd) - 1j * ak[2] * g[1]
    return complex(total)


def heat_kernel_expectation(section: SectionInD, x, t: float, chart: ChartId = PLUS, order: int = 24) -> complex:
    """E[Psi(x + W_t)] by tensor Gauss-Hermite quadrature.

    Only meaningful for the trivial bundle (n = 0), where the section is an
    ordinary function and this is the free heat semigroup.
    """
    z, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / math.sqrt(2.0 * math.pi)
    g = np.stack(np.meshgrid(z, z, z, indexing="ij"), axis=-1).reshape(-1, 3)
    wt = np.einsum("i,j,k->ijk", w, w, w).ravel()
    pts = np.asarray(x, dtype=float) + math.sqrt(t) * g
    vals = section_values(section, pts, chart)
    return complex(np.sum(wt * vals))


def modulus_slope(section: SectionInD, r_lo: float, r_hi: float, direction=(0.6, 0.3, 0.74),
                  chart: ChartId = PLUS, level: int = 0, npts: int = 9) -> float:
    """Least-squares log-log slope of |Psi| (level 0) or |nabla Psi| (level 1)
    along the ray through ``direction`` for radii in [r_lo, r_hi]."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    rs = np.geomspace(r_lo, r_hi, npts)
    if level == 0:
        vals = np.abs(section_values(section, rs[:, None] * d, chart))
    elif level == 1:
        vals = np.array([
            np.linalg.norm([covariant_derivative_fd(section, r * d, chart, k, 1e-3 * r) for k in range(3)])
            for r in rs
        ])
    else:
        raise ValueError("level must be 0 or 1")
    return float(np.polyfit(np.log(rs), np.log(vals), 1)[0])
