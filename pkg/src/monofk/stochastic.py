"""Brownian paths, stochastic integrals and stochastic parallel transport.

Paths live on a uniform time grid.  Increments for path ``i`` of seed ``s``
come from a Philox stream keyed by ``s + 2**64 * i`` so every path can be
regenerated on its own, and the Monte Carlo estimate does not depend on how
paths are split across workers.

Transport accumulates a real phase.  Within a chart it adds the midpoint
(trapezoid) sum ``0.5 (A(X_j) + A(X_{j+1})) . (X_{j+1} - X_j)``; at a switch
point ``y`` in the overlap it adds ``-2 n phi(y)`` (PLUS to MINUS) or
``+2 n phi(y)`` (MINUS to PLUS).  A switch out of PLUS is triggered once
``x3/|x| < -delta*switch_margin`` (mirror for MINUS).  If a single increment
would leave the current chart, the switch is taken at the start of that step
instead, provided that point lies in the overlap.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

from .geometry import MINUS, PLUS, ChartAtlas, ChartId, cos_polar, transition_phase
from .spectral import SectionInD, section_values

ORIGIN_EPS = 1e-9
RESAMPLE_BUDGET = 1_000_000
BATCH_SIZE = 256
REJECT_CAP = 0.01

OK, STRADDLE, ORIGIN, FORCED_OUTSIDE = 0, 1, 2, 3


class PathError(RuntimeError):
    pass


class StraddleError(PathError):
    """One increment jumped across both charts; the time step is too coarse."""


class OriginCollisionError(PathError):
    pass


class ResampleBudgetExceeded(PathError):
    pass


@dataclass(frozen=True)
class PathConfig:
    t_final: float
    n_steps: int
    seed: int = 0
    path_index: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if not (0 <= self.seed < 2**64 and 0 <= self.path_index < 2**64):
            raise ValueError("seed and path_index are unsigned 64-bit integers")

    @property
    def h(self) -> float:
        return self.t_final / self.n_steps


@dataclass(frozen=True)
class BrownianPath:
    times: np.ndarray
    points: np.ndarray
    n_resampled: int = 0

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])

    def coarsen(self, factor: int) -> "BrownianPath":
        """Same path observed on every ``factor``-th grid point."""
        n = self.points.shape[0] - 1
        if n % factor:
            raise ValueError("factor must divide the number of steps")
        return BrownianPath(self.times[::factor], self.points[::factor], self.n_resampled)


@dataclass(frozen=True)
class TransportState:
    chart: ChartId
    phase_angle: float
    switch_times: tuple = ()

    @property
    def factor(self) -> complex:
        return complex(np.exp(1j * self.phase_angle))


@dataclass(frozen=True)
class FkEstimate:
    mean: complex
    stderr: float
    n_paths: int
    n_rejected: int
    n_resampled: int = 0
    values: np.ndarray | None = field(default=None, repr=False, compare=False)


# --------------------------------------------------------------------------
# path sampling


def _main_stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(index) << 64)))


def _resample_stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(index) << 64), counter=[0, 0, 0, 1]))


def _positions(x0: np.ndarray, incr: np.ndarray, seed: int, index: int, h: float) -> tuple[np.ndarray, int]:
    n = incr.shape[0]
    pts = np.empty((n + 1, 3))
    pts[0] = x0
    np.cumsum(incr, axis=0, out=pts[1:])
    pts[1:] += x0
    eps = ORIGIN_EPS * max(1.0, float(np.linalg.norm(x0)))
    count = 0
    rs = None
    while True:
        bad = np.nonzero(np.einsum("ij,ij->i", pts[1:], pts[1:]) < eps * eps)[0]
        if bad.size == 0:
            return pts, count
        j = int(bad[0])
        if rs is None:
            rs = _resample_stream(seed, index)
        incr[j] = rs.standard_normal(3) * math.sqrt(h)
        count += 1
        if count > RESAMPLE_BUDGET:
            raise ResampleBudgetExceeded(f"path {index}: more than {RESAMPLE_BUDGET} origin rejections")
        pts[j + 1:] = pts[j] + np.cumsum(incr[j:], axis=0)


def sample_brownian_path(x0, cfg: PathConfig) -> BrownianPath:
    """Brownian path from ``x0`` with i.i.d. N(0, h) coordinate increments."""
    x0 = np.asarray(x0, dtype=float)
    if not np.linalg.norm(x0) > 0:
        raise ValueError("paths must start away from the origin")
    h = cfg.h
    incr = _main_stream(cfg.seed, cfg.path_index).standard_normal((cfg.n_steps, 3)) * math.sqrt(h)
    pts, count = _positions(x0, incr, cfg.seed, cfg.path_index, h)
    times = np.arange(cfg.n_steps + 1) * h
    times[-1] = cfg.t_final
    return BrownianPath(times, pts, count)


def sample_paths(x0, t_final: float, n_steps: int, seed: int, indices) -> tuple[np.ndarray, np.ndarray]:
    """Stacked points ``(len(indices), n_steps+1, 3)`` and per-path resample counts."""
    x0 = np.asarray(x0, dtype=float)
    h = t_final / n_steps
    indices = np.asarray(indices, dtype=np.uint64)
    out = np.empty((indices.size, n_steps + 1, 3))
    counts = np.zeros(indices.size, dtype=np.int64)
    sq = math.sqrt(h)
    for b, idx in enumerate(indices):
        incr = _main_stream(seed, int(idx)).standard_normal((n_steps, 3)) * sq
        out[b], counts[b] = _positions(x0, incr, seed, int(idx), h)
    return out, counts


# --------------------------------------------------------------------------
# stochastic integrals


def ito_integral(path: BrownianPath, f):
    """Left-point sum  sum_j f(X_j) . (X_{j+1} - X_j)."""
    fx = np.asarray(f(path.points))
    d = np.diff(path.points, axis=0)
    return np.einsum("ij,ij->", fx[:-1], d)[()]


def stratonovich_integral(path: BrownianPath, f):
    """Midpoint sum  sum_j (f(X_j) + f(X_{j+1}))/2 . (X_{j+1} - X_j)."""
    fx = np.asarray(f(path.points))
    d = np.diff(path.points, axis=0)
    return 0.5 * np.einsum("ij,ij->", fx[:-1] + fx[1:], d)[()]


def ito_integral_batch(points: np.ndarray, f) -> np.ndarray:
    fx = np.asarray(f(points))
    return np.einsum("bij,bij->b", fx[:, :-1], np.diff(points, axis=1))


def stratonovich_integral_batch(points: np.ndarray, f) -> np.ndarray:
    fx = np.asarray(f(points))
    return 0.5 * np.einsum("bij,bij->b", fx[:, :-1] + fx[:, 1:], np.diff(points, axis=1))


# --------------------------------------------------------------------------
# transport kernel


@njit(cache=True, nogil=True)
def _conn(n, sign, x1, x2, x3):
    r = math.sqrt(x1 * x1 + x2 * x2 + x3 * x3)
    if sign > 0:
        c = -n / (r * (x3 + r))
    else:
        c = n / (r * (r - x3))
    return c * x2, -c * x1


@njit(cache=True, nogil=True)
def _toggle(pts, j, n, delta, sign, phase, rec_step, rec_to, n_rec):
    x1, x2, x3 = pts[j, 0], pts[j, 1], pts[j, 2]
    xi = x3 / math.sqrt(x1 * x1 + x2 * x2 + x3 * x3)
    if not (-delta < xi < delta):
        return sign, phase, n_rec, False
    phi = math.atan2(x2, x1)
    if sign > 0:
        phase -= 2.0 * n * phi
    else:
        phase += 2.0 * n * phi
    sign = -sign
    if n_rec > 0 and rec_step[n_rec - 1] == j:
        n_rec -= 1
    else:
        rec_step[n_rec] = j
        rec_to[n_rec] = sign
        n_rec += 1
    return sign, phase, n_rec, True


@njit(cache=True, nogil=True)
def _transport_kernel(pts, n, delta, thr, start_sign, hysteresis, forced, rec_step, rec_to):
    """Returns (phase, final sign, number of switch records, status)."""
    nsteps = pts.shape[0] - 1
    sign = start_sign
    phase = 0.0
    n_rec = 0
    fi = 0
    nf = forced.shape[0]
    while fi < nf and forced[fi] == 0:
        sign, phase, n_rec, ok = _toggle(pts, 0, n, delta, sign, phase, rec_step, rec_to, n_rec)
        if not ok:
            return phase, sign, n_rec, 3
        fi += 1
    for j in range(nsteps):
        p1, p2, p3 = pts[j, 0], pts[j, 1], pts[j, 2]
        q1, q2, q3 = pts[j + 1, 0], pts[j + 1, 1], pts[j + 1, 2]
        rq = math.sqrt(q1 * q1 + q2 * q2 + q3 * q3)
        if rq == 0.0:
            return phase, sign, n_rec, 2
        xq = q3 / rq
        if (sign > 0 and xq <= -delta) or (sign < 0 and xq >= delta):
            # the step leaves the chart: switch at its start if possible
            sign, phase, n_rec, ok = _toggle(pts, j, n, delta, sign, phase, rec_step, rec_to, n_rec)
            if not ok:
                return phase, sign, n_rec, 1
        a1, a2 = _conn(n, sign, p1, p2, p3)
        b1, b2 = _conn(n, sign, q1, q2, q3)
        phase += 0.5 * ((a1 + b1) * (q1 - p1) + (a2 + b2) * (q2 - p2))
        if hysteresis and ((sign > 0 and xq < -thr) or (sign < 0 and xq > thr)):
            sign, phase, n_rec, ok = _toggle(pts, j + 1, n, delta, sign, phase, rec_step, rec_to, n_rec)
        while fi < nf and forced[fi] == j + 1:
            sign, phase, n_rec, ok = _toggle(pts, j + 1, n, delta, sign, phase, rec_step, rec_to, n_rec)
            if not ok:
                return phase, sign, n_rec, 3
            fi += 1
    return phase, sign, n_rec, 0


@njit(cache=True, nogil=True)
def _transport_batch(points, n, delta, thr, start_sign, hysteresis, forced, phases, signs, status):
    nsteps = points.shape[1] - 1
    rec_step = np.empty(nsteps + forced.shape[0] + 2, dtype=np.int64)
    rec_to = np.empty(nsteps + forced.shape[0] + 2, dtype=np.int64)
    for b in range(points.shape[0]):
        ph, sg, nr, st = _transport_kernel(points[b], n, delta, thr, start_sign, hysteresis, forced, rec_step, rec_to)
        phases[b] = ph
        signs[b] = sg
        status[b] = st


def _status_error(code: int) -> PathError:
    if code == STRADDLE:
        return StraddleError("a single increment left both charts' switching band; reduce the time step")
    if code == ORIGIN:
        return OriginCollisionError("path hit the origin")
    return PathError("forced stopping time at a point outside the chart overlap")


def _forced_array(forced) -> np.ndarray:
    arr = np.asarray(sorted(int(j) for j in forced), dtype=np.int64)
    return arr.reshape(-1)


def stochastic_transport(path: BrownianPath, atlas: ChartAtlas, start_chart: ChartId,
                         hysteresis: bool = True, forced_toggles=()) -> TransportState:
    """Stochastic parallel transport along ``path``.

    ``forced_toggles`` lists grid indices at which the chart is switched
    regardless of the hysteresis rule (each point must lie in the overlap);
    listing an index twice inserts a switch and an immediate switch back.
    """
    pts = np.ascontiguousarray(path.points, dtype=float)
    if not bool(np.all(_in_chart(atlas, start_chart, pts[0]))):
        raise ValueError("start point is not in the start chart")
    forced = _forced_array(forced_toggles)
    nsteps = pts.shape[0] - 1
    rec_step = np.empty(nsteps + forced.size + 2, dtype=np.int64)
    rec_to = np.empty(nsteps + forced.size + 2, dtype=np.int64)
    phase, sign, n_rec, status = _transport_kernel(
        pts, float(atlas.n), atlas.delta, atlas.threshold, start_chart.sign, hysteresis, forced, rec_step, rec_to
    )
    if status != OK:
        raise _status_error(status)
    switches = []
    for s, to in zip(rec_step[:n_rec], rec_to[:n_rec]):
        to_chart = PLUS if to > 0 else MINUS
        switches.append((int(s), to_chart.other, to_chart))
    return TransportState(PLUS if sign > 0 else MINUS, float(phase), tuple(switches))


def transport_batch(points: np.ndarray, atlas: ChartAtlas, start_chart: ChartId,
                    hysteresis: bool = True, forced_toggles=()):
    """Vectorised transport: returns (phases, final signs, status codes)."""
    points = np.ascontiguousarray(points, dtype=float)
    b = points.shape[0]
    phases = np.empty(b)
    signs = np.empty(b, dtype=np.int64)
    status = np.empty(b, dtype=np.int64)
    _transport_batch(points, float(atlas.n), atlas.delta, atlas.threshold, start_chart.sign, hysteresis,
                     _forced_array(forced_toggles), phases, signs, status)
    return phases, signs, status


def _in_chart(atlas: ChartAtlas, chart: ChartId, x):
    xi = cos_polar(x)
    return xi > -atlas.delta if chart is PLUS else xi < atlas.delta


def _to_output(values: np.ndarray, atlas: ChartAtlas, x0: np.ndarray, start_chart: ChartId,
               output_chart: ChartId) -> np.ndarray:
    if output_chart is start_chart:
        return values
    phase = transition_phase(atlas, x0)
    return values * phase if output_chart is PLUS else values / phase


def transport_inverse_apply(state: TransportState, section: SectionInD, path: BrownianPath,
                            atlas: ChartAtlas, output_chart: ChartId, start_chart: ChartId | None = None) -> complex:
    """Pi_t^{-1} Psi(X_t) as a fibre coordinate over X_0 in ``output_chart``.

    ``start_chart`` is the chart the transport was started in; by default the
    one implied by the recorded switches.
    """
    if start_chart is None:
        start_chart = state.switch_times[0][1] if state.switch_times else state.chart
    end = section_values(section, path.points[-1], state.chart)
    val = np.exp(-1j * state.phase_angle) * end
    return complex(_to_output(np.asarray(val), atlas, path.points[0], start_chart, output_chart))


def end_values(section: SectionInD, end_points: np.ndarray, phases: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """exp(-i phase) * Psi(X_N) in the final chart of each path."""
    out = np.empty(end_points.shape[0], dtype=complex)
    for sign, chart in ((1, PLUS), (-1, MINUS)):
        sel = signs == sign
        if sel.any():
            out[sel] = section_values(section, end_points[sel], chart)
    return np.exp(-1j * phases) * out


def default_start_chart(atlas: ChartAtlas, x) -> ChartId:
    return PLUS if cos_polar(x) >= 0 else MINUS


def worker_count() -> int:
    env = os.environ.get("MONOFK_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def fk_samples(section: SectionInD, x, t: float, n_paths: int, n_steps: int, seed: int,
               atlas: ChartAtlas | None = None, start_chart: ChartId | None = None,
               output_chart: ChartId | None = None, workers: int | None = None,
               batch_size: int = BATCH_SIZE):
    """Per-path samples of Pi_t^{-1} Psi(X_t), ordered by path index.

    Returns ``(values, status, resampled)``; rejected paths carry NaN.
    Batches are fixed blocks of path indices, so the values do not depend on
    ``workers``.
    """
    atlas = atlas or ChartAtlas(section.n)
    if atlas.n != section.n:
        raise ValueError("atlas and section disagree on the monopole charge")
    x = np.asarray(x, dtype=float)
    start_chart = start_chart or default_start_chart(atlas, x)
    output_chart = output_chart or start_chart
    values = np.full(n_paths, np.nan + 0j)
    status = np.zeros(n_paths, dtype=np.int64)
    resampled = np.zeros(n_paths, dtype=np.int64)
    starts = list(range(0, n_paths, batch_size))

    def run(s):
        idx = np.arange(s, min(s + batch_size, n_paths))
        pts, counts = sample_paths(x, t, n_steps, seed, idx)
        phases, signs, st = transport_batch(pts, atlas, start_chart)
        ok = st == OK
        vals = np.full(idx.size, np.nan + 0j)
        if ok.any():
            vals[ok] = end_values(section, pts[ok, -1], phases[ok], signs[ok])
        values[idx] = _to_output(vals, atlas, x, start_chart, output_chart)
        status[idx] = st
        resampled[idx] = counts

    workers = workers or worker_count()
    if workers == 1 or len(starts) == 1:
        for s in starts:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    return values, status, resampled


def summarize(values: np.ndarray) -> tuple[complex, float]:
    """Sample mean and standard error of a complex sample."""
    n = values.size
    mean = complex(np.mean(values))
    if n < 2:
        return mean, float("inf")
    var = float(np.sum(np.abs(values - mean) ** 2)) / (n - 1)
    return mean, math.sqrt(var / n)


def fk_estimate(section: SectionInD, x, t: float, n_paths: int, n_steps: int, seed: int = 0,
                atlas: ChartAtlas | None = None, start_chart: ChartId | None = None,
                output_chart: ChartId | None = None, workers: int | None = None,
                keep_values: bool = False) -> FkEstimate:
    """Monte Carlo estimate of (exp(-tH) Psi)(x) = E^x[Pi_t^{-1} Psi(X_t)].

    Raises ``PathError`` if more than 1% of paths are rejected.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    values, status, resampled = fk_samples(section, x, t, n_paths, n_steps, seed, atlas, start_chart,
                                           output_chart, workers)
    ok = status == OK
    n_rej = int(np.count_nonzero(~ok))
    if n_rej > REJECT_CAP * n_paths:
        raise PathError(f"{n_rej} of {n_paths} paths rejected (cap {REJECT_CAP:.0%})")
    mean, err = summarize(values[ok])
    return FkEstimate(mean, err, n_paths, n_rej, int(resampled.sum()), values if keep_values else None)
