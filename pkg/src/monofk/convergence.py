"""Finite-step convergence studies for the stochastic machinery.

Every comparison is paired: one fine Brownian path is sampled and then
observed on coarser sub-grids, so differences between step sizes measure the
discretisation alone and not fresh Monte Carlo noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import MINUS, PLUS, ChartAtlas, connection_components
from .spectral import SectionInD
from .stochastic import (
    BATCH_SIZE,
    OK,
    default_start_chart,
    end_values,
    fk_estimate,
    ito_integral_batch,
    sample_paths,
    stratonovich_integral_batch,
    summarize,
    transport_batch,
)

# weak-error constant for the Feynman-Kac acceptance budget C*sqrt(h); from
# calibrate_budget on the (n=1, l=1, m=0, k in [1, 3]) section at t = 0.5,
# h ~ 1e-4, 4096 paired paths, worst of x = (0,0,2) and (1,0.5,0.8), rounded up
DEFAULT_C_BUDGET = 0.02

ORDER_TARGET = 2.0
ORDER_REL_TOL = 0.3


@dataclass(frozen=True)
class OrderCheck:
    """A per-path difference tracked across step sizes ``hs`` (finest first).

    ``stats`` holds the median over paths of the absolute difference and
    ``ratios[i] = stats[i+1] / stats[i]``, the shrink factor for one refinement.
    """

    name: str
    hs: tuple[float, ...]
    stats: tuple[float, ...]
    means: tuple[float, ...]
    n_paths: int
    target: float = ORDER_TARGET
    rel_tol: float = ORDER_REL_TOL

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(b / a for a, b in zip(self.stats[:-1], self.stats[1:]))

    @property
    def passed(self) -> bool:
        lo, hi = self.target * (1 - self.rel_tol), self.target * (1 + self.rel_tol)
        return all(lo <= q <= hi for q in self.ratios)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "h": list(self.hs),
            "median_abs_diff": list(self.stats),
            "mean_abs_diff": list(self.means),
            "ratios": list(self.ratios),
            "n_paths": self.n_paths,
            "target_ratio": self.target,
            "rel_tol": self.rel_tol,
            "pass": self.passed,
        }


def _g(p):
    return p[..., 2] / np.linalg.norm(p, axis=-1)


def _grad_g(p):
    r = np.linalg.norm(p, axis=-1)[..., None]
    e3 = np.zeros_like(p)
    e3[..., 2] = 1.0
    return e3 / r - p * p[..., 2:3] / r**3


def _plus_factor(phases, signs, ends, n):
    """exp(i phase) re-expressed so that it acts on PLUS coordinates at X_N."""
    phi = np.arctan2(ends[:, 1], ends[:, 0])
    return np.exp(1j * phases) * np.where(signs < 0, np.exp(2j * n * phi), 1.0)


def _check(name, hs, diffs, n_paths):
    return OrderCheck(
        name,
        tuple(hs),
        tuple(float(np.median(d)) for d in diffs),
        tuple(float(np.mean(d)) for d in diffs),
        n_paths,
    )


def paired_path_study(x0=(2.0, 0.0, 0.0), t: float = 0.5, n_fine: int = 4096, factors=(1, 4, 16),
                      n_paths: int = 1024, seed: int = 0, n: int = 1, deltas=(0.3, 0.6),
                      toggle_times=(0.1, 0.3)) -> dict[str, OrderCheck]:
    """Per-path discretisation differences under h -> h/4.

    Transport results are compared as the factor Pi_t acting on a unit fibre
    vector, both sides written in chart PLUS at the end point and the start
    chart at ``x0``.

    * ``chart_choice``: hysteresis transport with overlap width ``deltas[0]``
      against ``deltas[1]``.
    * ``start_chart``: paths confined to the overlap, transported entirely in
      PLUS against entirely in MINUS (re-expressed through the transition
      phase at ``x0``).
    * ``refinement``: transport against the same transport with two extra
      stopping times at ``toggle_times`` (switch to the other chart and back).
    * ``gradient_identity``: midpoint sum of grad(x3/|x|) against the
      increment of x3/|x|.
    * ``strat_minus_ito``: midpoint minus left-point sum of the PLUS
      connection on paths confined to its chart.
    """
    x0 = np.asarray(x0, dtype=float)
    if any(n_fine % f for f in factors):
        raise ValueError("every factor must divide n_fine")
    pts, _ = sample_paths(x0, t, n_fine, seed, np.arange(n_paths))
    a_lo, a_hi = ChartAtlas(n, deltas[0]), ChartAtlas(n, deltas[1])
    conf_overlap = np.all(np.abs(_g(pts)) < a_hi.delta, axis=1)
    conf_plus = np.all(_g(pts) > -ChartAtlas(n).delta, axis=1)
    phi0 = math.atan2(x0[1], x0[0])

    hs = []
    raw = {k: [] for k in ("chart_choice", "start_chart", "refinement", "gradient_identity", "strat_minus_ito")}
    for f in factors:
        p = np.ascontiguousarray(pts[:, ::f])
        steps = p.shape[1] - 1
        h = t / steps
        hs.append(h)
        ends = p[:, -1]
        ph1, s1, st1 = transport_batch(p, a_lo, PLUS)
        ph2, s2, st2 = transport_batch(p, a_hi, PLUS)
        raw["chart_choice"].append((np.abs(_plus_factor(ph1, s1, ends, n) - _plus_factor(ph2, s2, ends, n)),
                                    (st1 == OK) & (st2 == OK)))
        phP, sP, stP = transport_batch(p, a_hi, PLUS, hysteresis=False)
        phM, sM, stM = transport_batch(p, a_hi, MINUS, hysteresis=False)
        dstart = np.abs(_plus_factor(phP, sP, ends, n) - _plus_factor(phM, sM, ends, n) * np.exp(-2j * n * phi0))
        raw["start_chart"].append((dstart, conf_overlap & (stP == OK) & (stM == OK)))
        toggles = [int(round(tt / h)) for tt in toggle_times]
        phF, sF, stF = transport_batch(p, a_hi, PLUS, hysteresis=False, forced_toggles=toggles)
        raw["refinement"].append((np.abs(_plus_factor(phP, sP, ends, n) - _plus_factor(phF, sF, ends, n)),
                                  (stP == OK) & (stF == OK)))
        res = np.abs(stratonovich_integral_batch(p, _grad_g) - (_g(ends) - _g(p[:, 0])))
        raw["gradient_identity"].append((res, np.ones(n_paths, dtype=bool)))

        def conn(q):
            return connection_components(n, PLUS, q)

        si = np.abs(stratonovich_integral_batch(p, conn) - ito_integral_batch(p, conn))
        raw["strat_minus_ito"].append((si, conf_plus))

    out = {}
    for name, levels in raw.items():
        keep = np.logical_and.reduce([m for _, m in levels])
        out[name] = _check(name, hs, [d[keep] for d, _ in levels], int(keep.sum()))
    return out


def stderr_scaling(section: SectionInD, x, t: float = 0.5, n_steps: int = 100,
                   counts=(1_000, 10_000, 100_000), seed: int = 0, workers: int | None = None) -> dict:
    """Regression slope of log(stderr) against log(n_paths).

    Each sample size uses its own seed (``seed + i``), so the estimates are
    independent.
    """
    errs, means = [], []
    for i, c in enumerate(counts):
        est = fk_estimate(section, x, t, int(c), n_steps, seed=seed + i, workers=workers)
        errs.append(est.stderr)
        means.append([est.mean.real, est.mean.imag])
    slope = float(np.polyfit(np.log(np.asarray(counts, dtype=float)), np.log(errs), 1)[0])
    return {"n_paths": [int(c) for c in counts], "means": means, "stderr": errs, "slope": slope}


def weak_bias_pairs(section: SectionInD, x, t: float, n_fine: int, n_paths: int, seed: int = 0,
                    factors=(1, 4, 16), atlas: ChartAtlas | None = None):
    """Paired Monte Carlo differences of the Feynman-Kac sample across step sizes.

    Returns a list of dicts, one per coarse factor, each with the step sizes,
    the mean difference (coarse minus finest) and its standard error.
    """
    x = np.asarray(x, dtype=float)
    atlas = atlas or ChartAtlas(section.n)
    start = default_start_chart(atlas, x)
    vals = {f: [] for f in factors}
    for s in range(0, n_paths, BATCH_SIZE):
        idx = np.arange(s, min(s + BATCH_SIZE, n_paths))
        pts, _ = sample_paths(x, t, n_fine, seed, idx)
        for f in factors:
            p = np.ascontiguousarray(pts[:, ::f])
            ph, sg, st = transport_batch(p, atlas, start)
            v = np.full(idx.size, np.nan + 0j)
            ok = st == OK
            if ok.any():
                v[ok] = end_values(section, p[ok, -1], ph[ok], sg[ok])
            vals[f].append(v)
    vals = {f: np.concatenate(v) for f, v in vals.items()}
    keep = np.logical_and.reduce([np.isfinite(v) for v in vals.values()])
    base = factors[0]
    out = []
    for f in factors[1:]:
        m, e = summarize(vals[f][keep] - vals[base][keep])
        out.append({"h_fine": t / n_fine * base, "h_coarse": t / n_fine * f,
                    "mean_diff": [m.real, m.imag], "abs_mean_diff": abs(m), "stderr": e,
                    "n_paths": int(keep.sum())})
    return out


def calibrate_budget(pairs) -> float:
    """C such that the weak error is bounded by C*sqrt(h).

    If the bias behaves as C*sqrt(h), a coarse/fine pair differs by
    C*(sqrt(h_c) - sqrt(h_f)); the mean difference is inflated by three
    standard errors before solving for C, and the largest estimate wins.
    """
    best = 0.0
    for p in pairs:
        gap = math.sqrt(p["h_coarse"]) - math.sqrt(p["h_fine"])
        best = max(best, (p["abs_mean_diff"] + 3.0 * p["stderr"]) / gap)
    return best


def fk_refinement_table(section: SectionInD, x, t: float, n_steps: int, n_paths: int, seed: int = 0,
                        levels: int = 3, atlas: ChartAtlas | None = None, workers: int | None = None):
    """Independent estimates at h0, h0/4, h0/16, ... (same seed)."""
    rows = []
    for lv in range(levels):
        steps = n_steps * 4**lv
        est = fk_estimate(section, x, t, n_paths, steps, seed=seed, atlas=atlas, workers=workers)
        rows.append({"h": t / steps, "n_paths": n_paths, "value_re": est.mean.real,
                     "value_im": est.mean.imag, "stderr": est.stderr})
    return rows
