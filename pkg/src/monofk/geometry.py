"""Geometry of the charge-n monopole line bundle over R^3 minus the origin.

Two charts cover the punctured space:

* ``PLUS``  = { x : x3/|x| > -delta }
* ``MINUS`` = { x : x3/|x| <  delta }

with fibre coordinates related on the overlap by ``v_plus = exp(2 i n phi) v_minus``.
The connection one-forms in Cartesian components are

    A_plus  = -n / (|x| (x3 + |x|)) * (x2, -x1, 0)
    A_minus =  n / (|x| (|x| - x3)) * (x2, -x1, 0)

so that ``A_plus - A_minus = 2 n dphi`` and transport along a curve inside one
chart multiplies the fibre coordinate by ``exp(i * integral A . dx)``.

Every function accepts either a single point of shape ``(3,)`` or a stack of
points of shape ``(..., 3)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class ChartError(ValueError):
    """A point was used in a chart that does not contain it."""


class ChartId(enum.Enum):
    PLUS = "plus"
    MINUS = "minus"

    @property
    def other(self) -> "ChartId":
        return ChartId.MINUS if self is ChartId.PLUS else ChartId.PLUS

    @property
    def sign(self) -> int:
        return 1 if self is ChartId.PLUS else -1


PLUS = ChartId.PLUS
MINUS = ChartId.MINUS


@dataclass(frozen=True)
class ChartAtlas:
    """Two-chart atlas for charge ``n``; ``delta`` sets the overlap width.

    ``switch_margin`` places the hysteresis thresholds for stochastic chart
    switching at ``x3/|x| = -+ delta * switch_margin``.
    """

    n: int = 1
    delta: float = 0.5
    switch_margin: float = 0.5

    def __post_init__(self):
        if int(self.n) != self.n:
            raise ValueError("monopole charge must be an integer")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.switch_margin < 1.0:
            raise ValueError(f"switch_margin must lie in (0, 1), got {self.switch_margin}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def threshold(self) -> float:
        return self.delta * self.switch_margin


@dataclass(frozen=True)
class FiberValue:
    """A point of the fibre over some base point, in the coordinates of ``chart``."""

    chart: ChartId
    value: complex

    def in_chart(self, atlas: ChartAtlas, x, chart: ChartId) -> "FiberValue":
        """Re-express in ``chart`` at base point ``x``."""
        if chart is self.chart:
            return self
        phase = transition_phase(atlas, x)
        if chart is PLUS:
            return FiberValue(PLUS, phase * self.value)
        return FiberValue(MINUS, self.value / phase)


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError(f"points must have a trailing axis of length 3, got {x.shape}")
    return x


def _norm(x: np.ndarray) -> np.ndarray:
    r = np.sqrt(np.einsum("...i,...i->...", x, x))
    if np.any(r == 0.0):
        raise ValueError("the origin is not a point of the base manifold")
    return r


def cos_polar(x) -> np.ndarray | float:
    """x3/|x|."""
    x = _points(x)
    out = x[..., 2] / _norm(x)
    return out


def chart_contains(atlas: ChartAtlas, chart: ChartId, x):
    """Membership test for the open chart sets."""
    xi = cos_polar(x)
    if chart is PLUS:
        res = xi > -atlas.delta
    else:
        res = xi < atlas.delta
    return bool(res) if np.ndim(res) == 0 else res


def _require(atlas: ChartAtlas, chart: ChartId, x):
    inside = chart_contains(atlas, chart, x)
    if not np.all(inside):
        raise ChartError(f"point(s) outside chart {chart.value}")


def azimuth(x):
    """Azimuthal angle in (-pi, pi]; undefined on the x3 axis."""
    x = _points(x)
    x1, x2 = x[..., 0], x[..., 1]
    if np.any((x1 == 0.0) & (x2 == 0.0)):
        raise ValueError("azimuth is undefined on the x3 axis")
    phi = np.arctan2(x2, x1)
    # arctan2 returns -pi for (negative, -0.0)
    phi = np.where(phi == -math.pi, math.pi, phi)
    return float(phi) if phi.ndim == 0 else phi


def in_overlap(atlas: ChartAtlas, x):
    xi = cos_polar(x)
    res = (xi > -atlas.delta) & (xi < atlas.delta)
    return bool(res) if np.ndim(res) == 0 else res


def transition_phase(atlas: ChartAtlas, x):
    """exp(2 i n phi(x)), the factor taking MINUS coordinates to PLUS ones."""
    if not np.all(in_overlap(atlas, x)):
        raise ChartError("transition function is only defined on the overlap")
    return np.exp(2j * atlas.n * np.asarray(azimuth(x)))[()]


def connection_components(n: int, chart: ChartId, x) -> np.ndarray:
    """Cartesian components of the connection form, without chart checks.

    Finite wherever the chart's pole-free denominator is non-zero, which is
    all of the chart and more.
    """
    x = _points(x)
    r = _norm(x)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    if chart is PLUS:
        c = -n / (r * (x3 + r))
    else:
        c = n / (r * (r - x3))
    return np.stack([c * x2, -c * x1, np.zeros_like(c)], axis=-1)


def connection_form(atlas: ChartAtlas, chart: ChartId, x) -> np.ndarray:
    """Connection one-form of ``chart`` at ``x`` as Cartesian components."""
    _require(atlas, chart, x)
    return connection_components(atlas.n, chart, x)


def transport_phase(n: int, chart: ChartId, points) -> float:
    """Sum over segments of 0.5*(A(p_j) + A(p_{j+1})) . (p_{j+1} - p_j).

    This is the trapezoid (Stratonovich midpoint) discretisation shared by the
    deterministic and stochastic transport code.
    """
    p = _points(points)
    if p.shape[0] < 2:
        return 0.0
    a = connection_components(n, chart, p)
    d = np.diff(p, axis=0)
    return float(0.5 * np.einsum("ij,ij->", a[:-1] + a[1:], d))


def parallel_transport_polyline(atlas: ChartAtlas, chart: ChartId, points) -> complex:
    """Parallel transport factor along a polyline lying inside ``chart``."""
    p = _points(points).reshape(-1, 3)
    _require(atlas, chart, p)
    return complex(np.exp(1j * transport_phase(atlas.n, chart, p)))


def loop_holonomy(atlas: ChartAtlas, chart: ChartId, colatitude: float, segments: int) -> complex:
    """Transport once around the unit circle at ``colatitude``, counter-clockwise
    about the x3 axis.

    For ``PLUS`` this tends to exp(2 pi i n (1 - cos(colatitude))) as the number
    of segments grows.
    """
    if segments < 1:
        raise ValueError("need at least one segment")
    t = np.linspace(0.0, 2.0 * math.pi, segments + 1)
    s = math.sin(colatitude)
    pts = np.stack([s * np.cos(t), s * np.sin(t), np.full_like(t, math.cos(colatitude))], axis=-1)
    pts[-1] = pts[0]
    return parallel_transport_polyline(atlas, chart, pts)


def divergence_fd(n: int, chart: ChartId, x, h: float = 1e-5) -> float:
    """Central finite-difference divergence of the connection components."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        total += (connection_components(n, chart, x + e)[k] - connection_components(n, chart, x - e)[k]) / (2 * h)
    return float(total)
