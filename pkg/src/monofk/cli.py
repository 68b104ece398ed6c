"""Command line driver: ``monofk {geometry,spectral,fk,convergence}``.

Each subcommand merges a JSON config (``--config``) with command line flags
(flags win), runs a family of checks and writes a JSON report.  The exit code
is 0 exactly when every check in the report passes.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time

import numpy as np

from . import __version__
from .convergence import (
    DEFAULT_C_BUDGET,
    calibrate_budget,
    fk_refinement_table,
    paired_path_study,
    stderr_scaling,
    weak_bias_pairs,
)
from .geometry import (
    MINUS,
    PLUS,
    ChartAtlas,
    chart_contains,
    connection_components,
    cos_polar,
    divergence_fd,
    loop_holonomy,
    parallel_transport_polyline,
    transition_phase,
)
from .spectral import (
    AngularMode,
    RadialProfile,
    SectionInD,
    angular_momentum_residuals,
    covariant_laplacian_fd,
    default_r_rule,
    fourier_bessel_forward,
    fourier_bessel_inverse,
    hamiltonian_apply,
    harmonic_eval,
    harmonic_table,
    heat_kernel_expectation,
    modulus_slope,
    mu_of,
    radial_eigen_residual,
    radial_norm2,
    section_eval,
    section_values,
    semigroup_apply,
)
from .stochastic import PathError, default_start_chart, fk_estimate

REPORT_SCHEMA = 1


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


def _point(v):
    if isinstance(v, str):
        v = [float(s) for s in v.split(",")]
    v = [float(s) for s in v]
    if len(v) != 3:
        raise ConfigError("a point needs exactly three coordinates")
    if not math.hypot(*v) > 0:
        raise ConfigError("the origin is excluded")
    return v


def _pos_int(v):
    if isinstance(v, bool) or int(v) != v or int(v) < 1:
        raise ConfigError(f"expected a positive integer, got {v!r}")
    return int(v)


def _seed(v):
    if isinstance(v, bool) or int(v) != v or not 0 <= int(v) < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {v!r}")
    return int(v)


def _int(v):
    if isinstance(v, bool) or int(v) != v:
        raise ConfigError(f"expected an integer, got {v!r}")
    return int(v)


def _pos_float(v):
    v = float(v)
    if not v > 0:
        raise ConfigError(f"expected a positive number, got {v}")
    return v


def _unit_open(v):
    v = float(v)
    if not 0 < v < 1:
        raise ConfigError(f"expected a number in (0, 1), got {v}")
    return v


def _bool(v):
    if not isinstance(v, bool):
        raise ConfigError(f"expected true or false, got {v!r}")
    return v


def _int_list(v):
    return [_pos_int(x) for x in v]


def _section(v):
    if isinstance(v, str):
        with open(v) as fh:
            v = json.load(fh)
    try:
        return SectionInD.from_json(v)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed section: {exc}") from exc


COMMON = {"seed": (_seed, 0), "charge": (_int, 1), "delta": (_unit_open, 0.5), "switch_margin": (_unit_open, 0.5)}

SCHEMAS = {
    "geometry": {**COMMON, "samples": (_pos_int, 10_000), "segments": (_pos_int, 10_000)},
    "spectral": {**COMMON, "k_lo": (_pos_float, 1.0), "k_hi": (_pos_float, 3.0), "samples": (_pos_int, 20),
                 "h_fd": (_pos_float, 1e-3)},
    "fk": {**COMMON, "x": (_point, [0.0, 0.0, 2.0]), "t": (_pos_float, 0.5), "n_paths": (_pos_int, 20_000),
           "n_steps": (_pos_int, 5_000), "section": (_section, None), "c_budget": (_pos_float, DEFAULT_C_BUDGET),
           "table": (_bool, False), "table_paths": (_pos_int, None)},
    "convergence": {**COMMON, "x": (_point, [0.0, 0.0, 2.0]), "t": (_pos_float, 0.5), "n_paths": (_pos_int, 1024),
                    "n_steps": (_pos_int, 4096), "study_x": (_point, [2.0, 0.0, 0.0]),
                    "stderr_counts": (_int_list, [1_000, 10_000, 100_000]), "stderr_steps": (_pos_int, 100),
                    "calibrate": (_bool, True), "calib_steps": (_pos_int, 5120), "calib_paths": (_pos_int, 4096),
                    "section": (_section, None)},
}


def resolve_config(command: str, file_cfg: dict, overrides: dict) -> dict:
    """Validate ``file_cfg`` merged with ``overrides`` against the command schema."""
    schema = SCHEMAS[command]
    unknown = set(file_cfg) - set(schema)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    merged = {**file_cfg, **{k: v for k, v in overrides.items() if v is not None}}
    out = {}
    for key, (check, default) in schema.items():
        if key in merged:
            try:
                out[key] = check(merged[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        else:
            out[key] = default
    return out


def _echo(cfg: dict) -> dict:
    return {k: (v.to_json() if isinstance(v, SectionInD) else v) for k, v in cfg.items()}


def _default_section(n: int) -> SectionInD:
    return SectionInD.single(n, max(abs(n), 1), 0, 1.0, 3.0)


# --------------------------------------------------------------------------
# reporting


def _cx(z) -> dict:
    z = complex(z)
    return {"re": z.real, "im": z.imag}


def check(name: str, value: float, tolerance: float, op: str = "<=", note: str | None = None) -> dict:
    value = float(value)
    passed = {"<=": value <= tolerance, ">=": value >= tolerance, "<": value < tolerance}[op]
    item = {"name": name, "value": value, "tolerance": float(tolerance), "comparison": op, "pass": bool(passed)}
    if note:
        item["note"] = note
    return item


def build_report(command: str, cfg: dict, results: dict, checks: list, started: float) -> dict:
    return {
        "schema": REPORT_SCHEMA,
        "command": command,
        "version": __version__,
        "seed": cfg["seed"],
        "inputs": _echo(cfg),
        "results": results,
        "checks": checks,
        "all_pass": all(c["pass"] for c in checks),
        "timing": {"wall_seconds": time.perf_counter() - started},
    }


def deterministic_payload(report: dict) -> dict:
    """The report without wall-clock timing."""
    return {k: v for k, v in report.items() if k != "timing"}


def _atlas(cfg) -> ChartAtlas:
    return ChartAtlas(cfg["charge"], cfg["delta"], cfg["switch_margin"])


# --------------------------------------------------------------------------
# commands


def _random_points(rng, count, r_lo=0.5, r_hi=5.0):
    u = rng.normal(size=(count, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * rng.uniform(r_lo, r_hi, size=(count, 1))


def cmd_geometry(cfg: dict) -> dict:
    started = time.perf_counter()
    atlas = _atlas(cfg)
    n = atlas.n
    rng = np.random.default_rng(cfg["seed"])
    results, checks = {}, []

    for label, theta in (("pi/3", math.pi / 3), ("pi/2", math.pi / 2)):
        hol = loop_holonomy(atlas, PLUS, theta, cfg["segments"])
        exact = complex(np.exp(2j * math.pi * n * (1 - math.cos(theta))))
        results[f"holonomy_{label}"] = _cx(hol)
        checks.append(check(f"holonomy_flux_{label}", abs(hol - exact), 1e-5))

    pts = _random_points(rng, cfg["samples"])
    xi = cos_polar(pts)
    plus = pts[xi > -atlas.delta]
    a = connection_components(n, PLUS, plus)
    bound = abs(n) / ((1 - atlas.delta) * np.linalg.norm(plus, axis=1))
    violations = int(np.count_nonzero(np.abs(a) > bound[:, None] * (1 + 1e-12)))
    results["bound_samples"] = int(plus.shape[0])
    checks.append(check("connection_bound_violations", violations, 0))

    over = pts[np.abs(xi) < atlas.delta]
    diff = connection_components(n, PLUS, over) - connection_components(n, MINUS, over)
    rho2 = over[:, 0] ** 2 + over[:, 1] ** 2
    dphi = np.stack([-over[:, 1], over[:, 0], np.zeros(len(over))], axis=1) / rho2[:, None]
    gauge = float(np.max(np.abs(diff - 2 * n * dphi))) if len(over) else 0.0
    checks.append(check("gauge_relation_max_error", gauge, 1e-12))

    worst_div = 0.0
    for x in plus[:200]:
        scale = np.linalg.norm(connection_components(n, PLUS, x)) / np.linalg.norm(x)
        if scale > 0:
            worst_div = max(worst_div, abs(divergence_fd(n, PLUS, x)) / scale)
        else:
            worst_div = max(worst_div, abs(divergence_fd(n, PLUS, x)))
    checks.append(check("divergence_relative", worst_div, 1e-6))

    mods = []
    for _ in range(20):
        start = _random_points(rng, 1, 1.0, 2.0)[0]
        start[2] = abs(start[2])
        walk = start + np.cumsum(rng.normal(scale=0.01, size=(200, 3)), axis=0)
        walk = walk[chart_contains(atlas, PLUS, walk)]
        mods.append(abs(abs(parallel_transport_polyline(atlas, PLUS, walk)) - 1.0))
    checks.append(check("transport_unit_modulus", max(mods), 1e-12))

    if len(over):
        x = over[0]
        seg = x + np.linspace(0, 1, 50)[:, None] * np.array([0.0, 0.05, 0.0])
        if np.all(np.abs(cos_polar(seg)) < atlas.delta):
            tp = parallel_transport_polyline(atlas, PLUS, seg)
            tm = parallel_transport_polyline(atlas, MINUS, seg)
            lhs = transition_phase(atlas, seg[-1]) * tm * np.conj(transition_phase(atlas, seg[0]))
            checks.append(check("transport_chart_independence", abs(lhs - tp), 1e-6))

    if n == 0:
        checks.append(check("zero_connection", float(np.max(np.abs(a))) if a.size else 0.0, 0.0))
    return build_report("geometry", cfg, results, checks, started)


def cmd_spectral(cfg: dict) -> dict:
    started = time.perf_counter()
    atlas = _atlas(cfg)
    n = atlas.n
    ell = max(abs(n), 1)
    rng = np.random.default_rng(cfg["seed"])
    if not cfg["k_lo"] < cfg["k_hi"]:
        raise ConfigError("need k_lo < k_hi")
    mode = AngularMode(n, ell, 0)
    mu = mu_of(mode)
    profile = RadialProfile(cfg["k_lo"], cfg["k_hi"])
    section = SectionInD.single(n, ell, 0, cfg["k_lo"], cfg["k_hi"])
    results = {"mu": mu, "ell": ell}
    checks = []

    rule = default_r_rule()
    psi = fourier_bessel_inverse(profile, mu, rule.nodes)
    lhs = radial_norm2(profile)
    rhs = float(rule.integrate(psi**2 * rule.nodes**2))
    results["parseval"] = {"spectral_norm2": lhs, "radial_norm2": rhs}
    checks.append(check("parseval_relative_error", abs(lhs - rhs) / lhs, 1e-6))

    k_grid = np.linspace(0.5 * cfg["k_lo"], cfg["k_hi"] + 0.5 * cfg["k_lo"], 64)
    back = fourier_bessel_forward(lambda r: fourier_bessel_inverse(profile, mu, r), mu, k_grid, rule)
    checks.append(check("round_trip_sup_error", float(np.max(np.abs(back - profile(k_grid)))), 1e-6))

    for k in (1.0, 2.0):
        checks.append(check(f"radial_eigen_residual_k{k:g}", radial_eigen_residual(mu, k, 1.3), 1e-6))

    u = np.array([math.cos(1.0), math.sin(1.0), 0.0])
    for m in (0, 1):
        table = harmonic_table(AngularMode(n, ell, m))
        r2, r3 = angular_momentum_residuals(table, PLUS, u, 1e-4)
        yv = abs(complex(harmonic_eval(table, PLUS, u)))
        checks.append(check(f"L3_residual_m{m}", r3 / yv, 1e-7, note="relative to |Y|"))
        checks.append(check(f"L2_residual_m{m}", r2 / (yv * ell * (ell + 1)), 1e-5, note="relative to l(l+1)|Y|"))

    s0 = modulus_slope(section, 1e-4, 1e-3)
    s1 = modulus_slope(section, 1e-4, 1e-3, level=1)
    s_far = modulus_slope(section, 1e2, 1e3)
    results["slopes"] = {"small_r": s0, "small_r_gradient": s1, "large_r": s_far,
                         "expected_small_r": mu - 0.5, "expected_small_r_gradient": mu - 1.5}
    checks.append(check("small_r_slope_error", abs(s0 - (mu - 0.5)), 0.05))
    checks.append(check("small_r_gradient_slope_error", abs(s1 - (mu - 1.5)), 0.05))
    checks.append(check("large_r_slope_error", abs(s_far + 1.0), 0.1))

    probe = _random_points(rng, 8)
    probe = probe[chart_contains(atlas, PLUS, probe)]
    same = semigroup_apply(section, 0.0)
    checks.append(check("semigroup_t0_identity",
                        float(np.max(np.abs(section_values(same, probe, PLUS) - section_values(section, probe, PLUS)))),
                        0.0))
    kk = profile.k_rule().nodes
    two = semigroup_apply(semigroup_apply(section, 0.2), 0.3).terms[0].profile(kk)
    one = semigroup_apply(section, 0.5).terms[0].profile(kk)
    checks.append(check("semigroup_law", float(np.max(np.abs(two - one))), 1e-12))
    norm0, norm1 = section.norm(), semigroup_apply(section, 0.5).norm()
    results["norms"] = {"t0": norm0, "t0.5": norm1}
    checks.append(check("semigroup_contraction", norm1 / norm0, 1.0, "<"))

    over = _random_points(rng, 200)
    over = over[np.abs(cos_polar(over)) < atlas.delta][:10]
    if len(over):
        vp = section_values(section, over, PLUS)
        vm = section_values(section, over, MINUS)
        gap = float(np.max(np.abs(vp - transition_phase(atlas, over) * vm)))
        checks.append(check("chart_relation_overlap", gap, 1e-10))

    h_sec = hamiltonian_apply(section)
    worst = 0.0
    for x in _random_points(rng, cfg["samples"]):
        chart = default_start_chart(atlas, x)
        fd = -0.5 * covariant_laplacian_fd(section, x, chart, cfg["h_fd"])
        exact = section_eval(h_sec, x, chart, atlas).value
        worst = max(worst, abs(fd - exact) / abs(exact))
    checks.append(check("hamiltonian_cross_validation", worst, 1e-3, note="max relative error"))
    return build_report("spectral", cfg, results, checks, started)


def cmd_fk(cfg: dict, csv_path: str | None = None) -> dict:
    started = time.perf_counter()
    atlas = _atlas(cfg)
    section = cfg["section"] or _default_section(atlas.n)
    if section.n != atlas.n:
        raise ConfigError("section charge differs from --charge")
    t, steps = cfg["t"], cfg["n_steps"]
    h = t / steps
    if t < 10 * h:
        raise ConfigError("need t >= 10*h, i.e. at least 10 time steps")
    x = np.asarray(cfg["x"])
    chart = default_start_chart(atlas, x)
    est = fk_estimate(section, x, t, cfg["n_paths"], steps, seed=cfg["seed"], atlas=atlas)
    spectral = section_eval(semigroup_apply(section, t), x, chart, atlas).value
    diff = abs(est.mean - spectral)
    budget = cfg["c_budget"] * math.sqrt(h)
    results = {
        "chart": chart.value,
        "h": h,
        "mc_mean": _cx(est.mean),
        "mc_stderr": est.stderr,
        "n_rejected": est.n_rejected,
        "n_resampled": est.n_resampled,
        "spectral_value": _cx(spectral),
        "abs_difference": diff,
        "discretization_budget": budget,
    }
    checks = [check("fk_agreement", diff, 3 * est.stderr + budget, note="3*stderr + c_budget*sqrt(h)")]
    if atlas.n == 0:
        oracle = heat_kernel_expectation(section, x, t, chart)
        results["heat_kernel_oracle"] = _cx(oracle)
        checks.append(check("heat_kernel_oracle", abs(est.mean - oracle), 3 * est.stderr, note="3*stderr"))
    if cfg["table"]:
        rows = fk_refinement_table(section, x, t, steps, cfg["table_paths"] or cfg["n_paths"], cfg["seed"], atlas=atlas)
        results["refinement_table"] = rows
        if csv_path:
            _write_csv(csv_path, [{"quantity": "fk_mean", **r} for r in rows])
    return build_report("fk", cfg, results, checks, started)


def cmd_convergence(cfg: dict, csv_path: str | None = None) -> dict:
    started = time.perf_counter()
    atlas = _atlas(cfg)
    section = cfg["section"] or _default_section(atlas.n)
    if section.n != atlas.n:
        raise ConfigError("section charge differs from --charge")
    x, t = np.asarray(cfg["x"]), cfg["t"]
    results, checks, rows = {}, [], []

    sc = stderr_scaling(section, x, t, cfg["stderr_steps"], cfg["stderr_counts"], cfg["seed"])
    results["stderr_scaling"] = sc
    checks.append(check("stderr_slope_error", abs(sc["slope"] + 0.5), 0.05, note="slope of log stderr vs log N"))
    for c, m, e in zip(sc["n_paths"], sc["means"], sc["stderr"]):
        rows.append({"quantity": "fk_mean", "h": t / cfg["stderr_steps"], "n_paths": c,
                     "value_re": m[0], "value_im": m[1], "stderr": e})

    study = paired_path_study(cfg["study_x"], t, cfg["n_steps"], (1, 4, 16), cfg["n_paths"], cfg["seed"],
                              atlas.n, (0.3, 0.6))
    results["order_study"] = {k: v.to_json() for k, v in study.items()}
    for name, oc in study.items():
        worst = max(abs(q / oc.target - 1) for q in oc.ratios)
        checks.append(check(f"{name}_ratio", worst, oc.rel_tol,
                            note=f"max relative deviation of shrink ratios {['%.3f' % q for q in oc.ratios]} "
                                 f"from {oc.target:g} under h -> h/4"))
        for h, med in zip(oc.hs, oc.stats):
            rows.append({"quantity": name, "h": h, "n_paths": oc.n_paths, "value_re": med, "value_im": 0.0,
                         "stderr": ""})

    if cfg["calibrate"]:
        pairs = weak_bias_pairs(section, x, t, cfg["calib_steps"], cfg["calib_paths"], cfg["seed"], atlas=atlas)
        results["weak_bias_pairs"] = pairs
        results["c_budget"] = calibrate_budget(pairs)
    if csv_path:
        _write_csv(csv_path, rows)
    return build_report("convergence", cfg, results, checks, started)


def _write_csv(path: str, rows: list) -> None:
    cols = ["quantity", "h", "n_paths", "value_re", "value_im", "stderr"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in cols})


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monofk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in SCHEMAS:
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH")
        s.add_argument("--output", metavar="PATH")
        s.add_argument("--seed", type=int)
        s.add_argument("--charge", type=int)
        s.add_argument("--delta", type=float)
        s.add_argument("--omit-timing", action="store_true", help="drop wall-clock timing from the report")
        if name in ("fk", "convergence"):
            s.add_argument("--n-paths", type=int)
            s.add_argument("--n-steps", type=int)
            s.add_argument("--t", type=float)
            s.add_argument("--x", metavar="X1,X2,X3")
            s.add_argument("--section", metavar="PATH", help="section JSON file")
            s.add_argument("--csv", metavar="PATH", help="write the convergence table as CSV")
        if name == "fk":
            s.add_argument("--c-budget", type=float)
            s.add_argument("--table", action="store_true", default=None,
                           help="add estimates at h/4 and h/16")
        if name == "convergence":
            s.add_argument("--no-calibrate", dest="calibrate", action="store_false", default=None)
            s.add_argument("--write-config", metavar="PATH", help="write an fk config carrying the calibrated c_budget")
    return p


def run(argv=None) -> tuple[dict, int]:
    args = build_parser().parse_args(argv)
    file_cfg = {}
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise ConfigError("config must be a JSON object")
    overrides = {"seed": args.seed, "charge": args.charge, "delta": args.delta}
    for key in ("n_paths", "n_steps", "t", "x", "section", "c_budget", "table", "calibrate"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    cfg = resolve_config(args.command, file_cfg, overrides)
    csv_path = getattr(args, "csv", None)
    if args.command == "geometry":
        report = cmd_geometry(cfg)
    elif args.command == "spectral":
        report = cmd_spectral(cfg)
    elif args.command == "fk":
        report = cmd_fk(cfg, csv_path)
    else:
        report = cmd_convergence(cfg, csv_path)
        if args.write_config and "c_budget" in report["results"]:
            with open(args.write_config, "w") as fh:
                json.dump({"c_budget": report["results"]["c_budget"]}, fh, indent=2)
    if args.omit_timing:
        report = deterministic_payload(report)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return report, 0 if report["all_pass"] else 1


def main(argv=None) -> int:
    try:
        _, code = run(argv)
    except (ConfigError, PathError, OSError, json.JSONDecodeError) as exc:
        print(f"monofk: error: {exc}", file=sys.stderr)
        return 2
    return code


if __name__ == "__main__":
    sys.exit(main())
