import cmath
import math

import numpy as np
import pytest

from monofk import stochastic
from monofk.geometry import MINUS, PLUS, ChartAtlas, connection_components, cos_polar
from monofk.spectral import SectionInD, hamiltonian_apply, section_eval, section_values
from monofk.stochastic import (
    BrownianPath,
    PathConfig,
    PathError,
    ResampleBudgetExceeded,
    StraddleError,
    fk_estimate,
    ito_integral,
    ito_integral_batch,
    sample_brownian_path,
    sample_paths,
    stochastic_transport,
    stratonovich_integral,
    stratonovich_integral_batch,
    transport_batch,
    transport_inverse_apply,
)

ATLAS = ChartAtlas(1)
HEADLINE = SectionInD.single(1, 1, 0, 1.0, 3.0)


def _reference_transport(points, atlas, start_chart):
    """Straight Python walk with the same switching rule, used as an oracle."""
    chart = start_chart
    phase = 0.0
    switches = []

    def toggle(j):
        nonlocal chart, phase
        x = points[j]
        assert abs(cos_polar(x)) < atlas.delta
        phi = math.atan2(x[1], x[0])
        phase += -2 * atlas.n * phi if chart is PLUS else 2 * atlas.n * phi
        switches.append((j, chart, chart.other))
        chart = chart.other

    for j in range(len(points) - 1):
        p, q = points[j], points[j + 1]
        xq = cos_polar(q)
        if (chart is PLUS and xq <= -atlas.delta) or (chart is MINUS and xq >= atlas.delta):
            toggle(j)
        a = connection_components(atlas.n, chart, np.stack([p, q]))
        phase += 0.5 * float((a[0] + a[1]) @ (q - p))
        if (chart is PLUS and xq < -atlas.threshold) or (chart is MINUS and xq > atlas.threshold):
            toggle(j + 1)
    return chart, phase, switches


def test_path_config_validation():
    with pytest.raises(ValueError):
        PathConfig(0.5, 0)
    with pytest.raises(ValueError):
        PathConfig(0.0, 10)
    with pytest.raises(ValueError):
        PathConfig(1.0, 10, seed=-1)
    assert PathConfig(0.5, 5000).h == pytest.approx(1e-4)


def test_path_reproducible_and_independent():
    cfg = PathConfig(0.5, 100, seed=42, path_index=7)
    a = sample_brownian_path((1.0, 0.0, 0.0), cfg)
    b = sample_brownian_path((1.0, 0.0, 0.0), cfg)
    assert np.array_equal(a.points, b.points)
    c = sample_brownian_path((1.0, 0.0, 0.0), PathConfig(0.5, 100, seed=42, path_index=8))
    assert not np.array_equal(a.points, c.points)
    d = sample_brownian_path((1.0, 0.0, 0.0), PathConfig(0.5, 100, seed=43, path_index=7))
    assert not np.array_equal(a.points, d.points)
    stack, _ = sample_paths((1.0, 0.0, 0.0), 0.5, 100, 42, [6, 7])
    assert np.array_equal(stack[1], a.points)
    assert a.times[0] == 0.0 and a.times[-1] == 0.5 and np.all(np.diff(a.times) > 0)
    assert np.array_equal(a.points[0], [1.0, 0.0, 0.0])


def test_increment_statistics():
    path = sample_brownian_path((1.0, 2.0, 3.0), PathConfig(1.0, 100_000, seed=1))
    inc = np.diff(path.points, axis=0).ravel()
    sigma = math.sqrt(1e-5)
    assert abs(inc.mean()) <= 4 * sigma / math.sqrt(inc.size)
    assert inc.var() == pytest.approx(1e-5, rel=0.02)


def test_endpoint_variance_million_paths():
    pts, _ = sample_paths((1.0, 0.0, 0.0), 0.5, 1, 3, np.arange(1_000_000))
    assert np.var(pts[:, -1, 0] - 1.0, ddof=1) == pytest.approx(0.5, rel=0.01)


def test_origin_rejection(monkeypatch):
    monkeypatch.setattr(stochastic, "ORIGIN_EPS", 0.3)
    path = sample_brownian_path((0.35, 0.0, 0.0), PathConfig(0.2, 400, seed=2))
    assert path.n_resampled > 0
    assert np.all(np.linalg.norm(path.points, axis=1) >= 0.3)
    again = sample_brownian_path((0.35, 0.0, 0.0), PathConfig(0.2, 400, seed=2))
    assert np.array_equal(path.points, again.points)
    monkeypatch.setattr(stochastic, "RESAMPLE_BUDGET", 0)
    with pytest.raises(ResampleBudgetExceeded):
        sample_brownian_path((0.35, 0.0, 0.0), PathConfig(0.2, 400, seed=2))


def test_coarsen():
    path = sample_brownian_path((1.0, 0.0, 0.0), PathConfig(0.5, 64, seed=0))
    c = path.coarsen(4)
    assert c.points.shape == (17, 3) and c.h == pytest.approx(4 * path.h)
    assert np.array_equal(c.points[-1], path.points[-1])
    with pytest.raises(ValueError):
        path.coarsen(5)


def test_ito_constant_field():
    path = sample_brownian_path((1.0, 0.0, 0.5), PathConfig(0.5, 200, seed=5))
    c = np.array([0.3, -1.2, 2.0])
    val = ito_integral(path, lambda p: np.broadcast_to(c, p.shape))
    assert val == pytest.approx(c @ (path.points[-1] - path.points[0]), abs=1e-12)


def test_stratonovich_midpoint_identity():
    path = sample_brownian_path((1.0, 0.0, 0.5), PathConfig(0.5, 200, seed=5))
    x = path.points[:, 0]
    f = lambda p: np.stack([p[:, 0], 0 * p[:, 0], 0 * p[:, 0]], axis=1)  # noqa: E731
    manual = float(np.sum(0.5 * (x[:-1] + x[1:]) * np.diff(x)))
    assert stratonovich_integral(path, f) == pytest.approx(manual, abs=1e-14)
    # the midpoint sum of x dx telescopes exactly
    assert manual == pytest.approx(0.5 * (x[-1] ** 2 - x[0] ** 2), abs=1e-12)


def _conn_plus(p):
    return connection_components(1, PLUS, p)


def test_ito_mean_zero_confined():
    pts, _ = sample_paths((0.0, 0.3, 2.0), 0.5, 100, 9, np.arange(10_000))
    conf = np.all(cos_polar(pts) > -ATLAS.delta, axis=1)
    assert conf.mean() > 0.99
    z = ito_integral_batch(pts[conf], _conn_plus)
    assert abs(z.mean()) <= 4 * z.std(ddof=1) / math.sqrt(z.size)


def test_ito_isometry():
    pts, _ = sample_paths((0.0, 0.5, 3.0), 0.5, 50, 4, np.arange(100_000))
    assert np.all(cos_polar(pts) > -ATLAS.delta)
    z = ito_integral_batch(pts, _conn_plus)
    a = _conn_plus(pts[:, :-1])
    rhs = np.mean(np.sum(np.einsum("bij,bij->bi", a, a), axis=1) * 0.01)
    assert np.mean(z**2) == pytest.approx(rhs, rel=0.05)


def _g(p):
    return p[..., 2] / np.linalg.norm(p, axis=-1)


def _grad_g(p):
    r = np.linalg.norm(p, axis=-1)[..., None]
    e3 = np.zeros_like(p)
    e3[..., 2] = 1.0
    return e3 / r - p * p[..., 2:3] / r**3


def test_stratonovich_gradient_and_divergence_free_limits():
    pts, _ = sample_paths((2.0, 0.0, 0.5), 0.5, 1024, 12, np.arange(400))
    res, si = [], []
    conf = np.all(cos_polar(pts) > -ATLAS.delta, axis=1)
    for f in (1, 4, 16):
        p = pts[:, ::f]
        res.append(np.median(np.abs(stratonovich_integral_batch(p, _grad_g) - (_g(p[:, -1]) - _g(p[:, 0])))))
        d = stratonovich_integral_batch(p[conf], _conn_plus) - ito_integral_batch(p[conf], _conn_plus)
        si.append(np.median(np.abs(d)))
    assert res[0] < res[1] < res[2]
    assert si[0] < si[1] < si[2]


def test_transport_matches_reference_walk():
    for idx in range(20):
        path = sample_brownian_path((0.5, 0.2, 0.1), PathConfig(1.0, 300, seed=21, path_index=idx))
        for chart in (PLUS, MINUS):
            state = stochastic_transport(path, ATLAS, chart)
            ref_chart, ref_phase, ref_sw = _reference_transport(path.points, ATLAS, chart)
            assert state.chart is ref_chart
            assert state.phase_angle == pytest.approx(ref_phase, abs=1e-12)
            assert list(state.switch_times) == ref_sw


def test_transport_invariants():
    for idx in range(30):
        path = sample_brownian_path((0.5, 0.2, 0.1), PathConfig(1.0, 500, seed=3, path_index=idx))
        state = stochastic_transport(path, ATLAS, PLUS)
        assert abs(abs(state.factor) - 1) <= 1e-12
        steps = [s for s, _, _ in state.switch_times]
        assert steps == sorted(steps) and len(set(steps)) == len(steps)
        charts = [PLUS] + [to for _, _, to in state.switch_times]
        assert all(a is not b for a, b in zip(charts, charts[1:]))
        for _, frm, to in state.switch_times:
            assert frm is not to
        x_end = path.points[-1]
        assert (cos_polar(x_end) > -ATLAS.delta) if state.chart is PLUS else (cos_polar(x_end) < ATLAS.delta)


def test_transport_trivial_bundle():
    atlas = ChartAtlas(0)
    pts, _ = sample_paths((0.1, 0.0, 0.0), 1.0, 400, 8, np.arange(64))
    phases, signs, status = transport_batch(pts, atlas, PLUS)
    ok = status == 0
    assert ok.sum() > 50 and np.all(phases[ok] == 0.0)
    assert np.any(signs[ok] < 0)


def test_noop_switch_and_back_is_exact():
    path = sample_brownian_path((2.0, 0.0, 0.0), PathConfig(0.5, 1000, seed=4))
    j = 400
    assert abs(cos_polar(path.points[j])) < ATLAS.delta
    base = stochastic_transport(path, ATLAS, PLUS)
    noop = stochastic_transport(path, ATLAS, PLUS, forced_toggles=[j, j])
    assert abs(noop.factor - base.factor) <= 1e-12
    assert noop.switch_times == base.switch_times


def test_start_chart_relation_in_overlap():
    diffs = {}
    x0 = np.array([2.0, 0.3, 0.0])
    for steps in (256, 4096):
        pts, _ = sample_paths(x0, 0.1, 4096, 6, np.arange(200))
        pts = pts[:, :: 4096 // steps]
        conf = np.all(np.abs(cos_polar(pts)) < ATLAS.delta, axis=1)
        d = []
        for p in pts[conf]:
            path = BrownianPath(np.linspace(0, 0.1, steps + 1), p)
            a = stochastic_transport(path, ATLAS, PLUS, hysteresis=False)
            b = stochastic_transport(path, ATLAS, MINUS, hysteresis=False)
            # both written as maps from PLUS coordinates at the end to PLUS coordinates at x0
            fb = b.factor * cmath.exp(2j * math.atan2(p[-1, 1], p[-1, 0])) * cmath.exp(-2j * math.atan2(x0[1], x0[0]))
            d.append(abs(a.factor - fb))
        diffs[steps] = np.median(d)
    assert diffs[4096] < diffs[256] / 4
    assert diffs[4096] < 1e-4


def test_straddle_and_errors():
    pts = np.array([[0.0, 0.1, 1.0], [0.0, 0.1, -1.0]])
    with pytest.raises(StraddleError):
        stochastic_transport(BrownianPath(np.array([0.0, 1.0]), pts), ATLAS, PLUS)
    with pytest.raises(ValueError):
        stochastic_transport(BrownianPath(np.array([0.0, 1.0]), pts[::-1]), ATLAS, PLUS)
    ok = np.array([[1.0, 0.0, 0.9], [1.0, 0.0, 1.0]])
    with pytest.raises(PathError):
        stochastic_transport(BrownianPath(np.array([0.0, 1.0]), ok), ATLAS, PLUS, forced_toggles=[1])


def test_inverse_apply_basics():
    x = np.array([1.0, 0.5, 0.8])
    path = sample_brownian_path(x, PathConfig(1e-24, 1, seed=0))
    state = stochastic_transport(path, ATLAS, PLUS)
    val = transport_inverse_apply(state, HEADLINE, path, ATLAS, PLUS)
    assert val == pytest.approx(section_eval(HEADLINE, x, PLUS).value, rel=1e-9)
    path = sample_brownian_path(x, PathConfig(1.0, 500, seed=3))
    state = stochastic_transport(path, ATLAS, PLUS)
    val = transport_inverse_apply(state, HEADLINE, path, ATLAS, PLUS)
    end = section_values(HEADLINE, path.points[-1], state.chart)
    assert abs(val) == pytest.approx(abs(end), rel=1e-14)
    free = SectionInD.single(0, 1, 0, 1.0, 3.0)
    st0 = stochastic_transport(path, ChartAtlas(0), PLUS)
    assert transport_inverse_apply(st0, free, path, ChartAtlas(0), PLUS) == pytest.approx(
        complex(section_values(free, path.points[-1], PLUS)), abs=1e-15)


def test_inverse_apply_output_chart():
    x = np.array([1.0, 0.5, 0.1])
    path = sample_brownian_path(x, PathConfig(0.2, 200, seed=7))
    state = stochastic_transport(path, ATLAS, PLUS)
    vp = transport_inverse_apply(state, HEADLINE, path, ATLAS, PLUS)
    vm = transport_inverse_apply(state, HEADLINE, path, ATLAS, MINUS, start_chart=PLUS)
    assert vp == pytest.approx(cmath.exp(2j * math.atan2(x[1], x[0])) * vm, abs=1e-14)


def test_fk_deterministic_across_workers():
    a = fk_estimate(HEADLINE, (1.0, 0.5, 0.8), 0.2, 1500, 200, seed=5, workers=1, keep_values=True)
    b = fk_estimate(HEADLINE, (1.0, 0.5, 0.8), 0.2, 1500, 200, seed=5, workers=4, keep_values=True)
    assert a.mean == b.mean and a.stderr == b.stderr
    assert np.array_equal(a.values, b.values, equal_nan=True)
    c = fk_estimate(HEADLINE, (1.0, 0.5, 0.8), 0.2, 1500, 200, seed=6)
    assert c.mean != a.mean


def test_fk_short_time_limit():
    for x in ((0.0, 0.0, 2.0), (1.0, 0.5, 0.8)):
        t, steps = 0.01, 100
        est = fk_estimate(HEADLINE, x, t, 20_000, steps, seed=1)
        psi = section_eval(HEADLINE, x, PLUS).value
        drift = 2 * t * abs(section_eval(hamiltonian_apply(HEADLINE), x, PLUS).value)
        assert abs(est.mean - psi) <= 3 * est.stderr + drift + 0.02 * math.sqrt(t / steps)


def test_fk_rejection_cap():
    with pytest.raises(PathError):
        fk_estimate(HEADLINE, (0.02, 0.0, 0.0), 0.5, 512, 4, seed=0)


def test_fk_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        fk_estimate(HEADLINE, (1.0, 0.0, 0.0), 0.0, 10, 10)
