"""Command-line experiment runner.

``swave <experiment> [--preset NAME] [--config FILE] [--K n] [--M n] [--T x] [--out DIR] ...``

Parameters are merged in the order preset < INI file (section ``[swave]``) <
flags.  Every run writes ``result.csv`` and ``report.txt`` (plus field CSVs
where relevant) into the output directory.

Exit status: 0 verdict passed, 1 verdict failed, 2 parse error,
3 precondition violated, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import carleman, control, solvers
from .errors import NumericalFailure, PreconditionError
from .presets import PRESETS, list_presets, profile_coefficients
from .spatial import BoundarySpec, CoefficientSet, Grid, as_polynomial
from .tree import AdaptedField, BinaryTree

EXPERIMENTS = (
    "condition-check", "gamma0", "identity-residual", "duality-check", "observability", "hum",
    "negative-classical", "negative-localized", "negative-noboundary", "reduction-check",
)

INT_KEYS = {"K", "M", "samples", "seed", "budget"}
FLOAT_KEYS = {"L", "T", "x0", "alpha", "c0", "c1", "lam", "mu0"}
STR_KEYS = {"a", "profile", "gamma0", "which", "mask", "phi", "a1", "a2", "a3", "a4", "a5", "preset"}
DEFAULTS = {"samples": 10, "seed": 0, "budget": 4096, "which": "f", "gamma0": "auto", "mask": "left-half"}
HARD_CAP = 1 << 16

# exhaustive minimizations scale with the node count; keep their default tree small
EXPERIMENT_DEFAULTS = {
    "negative-classical": {"K": 3, "M": 7, "T": 0.3},
    "negative-localized": {"K": 3, "M": 7, "T": 0.3},
    "negative-noboundary": {"K": 3, "M": 7, "T": 0.3},
}


class ConfigError(Exception):
    pass


@dataclass
class ExperimentResult:
    experiment: str
    params: dict
    metrics: dict
    verdict: bool
    notes: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)


# ---------------------------------------------------------------- configuration


def _coerce(key: str, value):
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    if key in STR_KEYS:
        return str(value)
    raise ConfigError(f"unknown parameter {key!r}")


def resolve_params(preset: str | None, config: str | None, overrides: dict,
                   experiment: str | None = None) -> dict:
    params = dict(DEFAULTS)
    file_values = {}
    if config:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            with open(config) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {config}: {exc}") from exc
        if parser.has_section("swave"):
            file_values = dict(parser.items("swave"))
        elif parser.sections():
            raise ConfigError("config must contain a [swave] section")
    name = overrides.get("preset") or file_values.get("preset") or preset or "remark-rm2"
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    params.update({k: v for k, v in PRESETS[name].items() if k != "description"})
    params["preset"] = name
    params.update(EXPERIMENT_DEFAULTS.get(experiment, {}))
    for source in (file_values, overrides):
        for key, value in source.items():
            if value is not None:
                params[key] = _coerce(key, value)
    for key in ("K", "M", "L", "T", "samples"):
        if key in params and not params[key] > 0:
            raise ConfigError(f"{key} must be positive")
    if params["budget"] > HARD_CAP:
        raise ConfigError(f"budget exceeds hard cap {HARD_CAP}")
    if params["K"] * 2 * params["M"] > params["budget"]:
        raise ConfigError(f"K*2M = {params['K'] * 2 * params['M']} exceeds budget {params['budget']}")
    return params


def _vector(text: str, M: int) -> np.ndarray:
    vals = np.array([float(v) for v in str(text).split(",")])
    if vals.size == 1:
        return np.full(M, vals[0])
    if vals.size != M:
        raise ConfigError(f"profile has {vals.size} values, expected 1 or {M}")
    return vals


def build(params: dict):
    try:
        a = as_polynomial([float(v) for v in str(params["a"]).split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad coefficient polynomial {params['a']!r}") from exc
    grid = Grid(params["L"], params["M"], a)
    try:
        coeffs = profile_coefficients(grid, params["profile"])
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    changes = {n: _vector(params[n], grid.M) for n in ("a1", "a2", "a3", "a4", "a5") if n in params}
    if changes:
        coeffs = coeffs.replace(**changes)
    phi = None
    if "phi" in params:
        phi = as_polynomial([float(v) for v in str(params["phi"]).split(",")])
    cfg = carleman.CarlemanConfig(x0=params["x0"], alpha=params["alpha"], c0=params["c0"], c1=params["c1"],
                                  lam=params["lam"], T=params["T"], mu0=params.get("mu0"), phi=phi)
    if params["gamma0"] == "auto":
        gamma0 = carleman.compute_gamma0(grid, cfg)
    else:
        try:
            gamma0 = BoundarySpec.parse(params["gamma0"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return grid, coeffs, cfg, gamma0


def _tree(params) -> BinaryTree:
    return BinaryTree(params["K"], params["T"])


# ---------------------------------------------------------------- experiments


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def run_condition_check(params):
    grid, coeffs, cfg, gamma0 = build(params)
    c1r = carleman.check_condition1(grid, cfg)
    if c1r.critical_point is not None:
        raise PreconditionError(c1r.message)
    notes = [c1r.message]
    found = carleman.search_constants(grid, cfg, coeffs)
    if found is not None:
        cfg = cfg.replace(c0=found[0], c1=found[1])
        notes.append(f"constant search: c0 = {found[0]:.6g}, c1 = {found[1]:.6g}")
    else:
        notes.append("constant search: no admissible (c0, c1) for this T; configured values kept")
    c2r = carleman.check_condition2(grid, cfg, coeffs)
    for it in c2r.items:
        notes.append(f"{'PASS' if it.holds else 'FAIL'} {it.name}: slack {it.slack:.6g} ({it.detail})")
    wf = carleman.weight_fields(grid, cfg)
    bounds = carleman.coefficient_bounds(grid, cfg)
    metrics = {"mu0_max": c1r.mu0_max, "bracket_min": c1r.bracket_min, "min_abs_dphi": c1r.min_abs_dphi,
               "R0": c2r.R0, "R1": c2r.R1, "T0": c2r.T0, "c0": cfg.c0, "c1": cfg.c1,
               "gamma0": gamma0.label(), "eps0": wf.eps0, "eps1": wf.eps1,
               "c11_slack": bounds.c11_slack, "B_cubic_slack": bounds.B_cubic_slack}
    metrics.update({f"item{i + 1}_slack": it.slack for i, it in enumerate(c2r.items)})
    return ExperimentResult("condition-check", params, metrics, c1r.holds and c2r.holds, notes,
                            {"weights.csv": (list(wf.header), wf.rows().tolist())})


def run_gamma0(params):
    grid, _, cfg, _ = build(params)
    g = carleman.compute_gamma0(grid, cfg)
    return ExperimentResult("gamma0", params, {"gamma0": g.label()}, not g.is_empty,
                            [f"Gamma0 = {g.label()}"])


def run_identity_residual(params):
    grid, _, cfg, _ = build(params)
    res = carleman.identity_residual(grid, cfg, lambda t, x: np.sin(np.pi * x) * np.sin(t))
    metrics = {f"residual_{i}": r for i, r in enumerate(res.residuals)}
    metrics.update({f"order_{i}": o for i, o in enumerate(res.orders)})
    rows = [[h, r, s] for h, r, s in zip(res.steps, res.residuals, res.scale)]
    return ExperimentResult("identity-residual", params, metrics, min(res.orders) >= 1.8,
                            [f"observed orders {', '.join(f'{o:.4f}' for o in res.orders)}"],
                            {"identity.csv": (["dx", "residual", "rhs_norm"], rows)})


def run_duality_check(params):
    grid, coeffs, _, gamma0 = build(params)
    tree = _tree(params)
    rng = np.random.default_rng(params["seed"])
    rel = [control.duality_check(grid, coeffs, tree, gamma0, rng).relative for _ in range(params["samples"])]
    zero = np.zeros(grid.M)
    h = AdaptedField.deterministic(tree, np.ones(2), tree.K)
    quad = solvers.solve_backward_controlled(grid, coeffs, tree, zero, zero, h, gamma0)
    header, rows = solvers.trajectory_rows(quad)
    return ExperimentResult("duality-check", params, {"max_relative_residual": max(rel)}, max(rel) <= 1e-10,
                            [f"{len(rel)} random instances"], {"trajectory.csv": (header, rows)})


def run_observability(params):
    grid, coeffs, _, gamma0 = build(params)
    tree = _tree(params)
    gram = control.gramian_assemble(grid, coeffs, tree, gamma0)
    obs = control.observability_ratio(grid, coeffs, tree, gamma0, samples=params["samples"],
                                      seed=params["seed"], gram=gram)
    metrics = {"gamma0": gamma0.label(), "lambda_min": gram.lambda_min, "lambda_max": gram.lambda_max,
               "asymmetry": gram.asymmetry, "constant": obs.constant, "lobpcg_constant": obs.lobpcg_constant,
               "worst_sampled_ratio": obs.worst_sampled_ratio}
    notes = [f"Gamma0 = {gamma0.label()}",
             f"observability constant {obs.constant:.6g}" if obs.observable else "observability fails"]
    return ExperimentResult("observability", params, metrics, obs.observable, notes,
                            {"gramian.csv": ([f"c{j}" for j in range(gram.matrix.shape[1])],
                                             gram.matrix.tolist())})


def run_hum(params):
    grid, coeffs, _, gamma0 = build(params)
    tree = _tree(params)
    rng = np.random.default_rng(params["seed"])
    yT = rng.standard_normal((1 << tree.K, grid.M))
    zero = np.zeros(grid.M)
    res = control.hum_synthesize(grid, coeffs, tree, gamma0, zero, zero, yT, np.zeros_like(yT))
    header, rows = solvers.trajectory_rows(res.quad)
    metrics = {"relative_residual": res.relative_residual, "terminal_residual": res.terminal_residual,
               "cg_iterations": res.cg.iterations}
    ok = res.relative_residual <= 1e-8 and res.terminal_residual <= 1e-8
    return ExperimentResult("hum", params, metrics, ok, ["leaf-dependent terminal target, zero initial data"],
                            {"trajectory.csv": (header, rows)})


def run_negative_classical(params):
    grid, coeffs, _, gamma0 = build(params)
    tree = _tree(params)
    cert = control.negative_classical(grid, coeffs, tree)
    ok = cert.bound > 0 and abs(cert.exhaustive_min - cert.bound) <= 1e-12 * max(1.0, cert.bound)
    ok = ok and cert.contrast_min < 1e-8
    metrics = {"lower_bound": cert.bound, "exhaustive_min": cert.exhaustive_min, "refined_min": cert.contrast_min}
    return ExperimentResult("negative-classical", params, metrics, ok,
                            [f"residual lower bound = {cert.bound:.12g}", cert.detail])


def _mask(params, grid: Grid) -> np.ndarray:
    spec = params["mask"]
    if spec == "left-half":
        return grid.x < grid.L / 2
    if spec == "right-half":
        return grid.x > grid.L / 2
    if spec == "all":
        return np.ones(grid.M, dtype=bool)
    try:
        return _vector(spec, grid.M) != 0
    except ValueError as exc:
        raise ConfigError(f"bad mask {spec!r}") from exc


def run_negative_localized(params):
    grid, coeffs, _, gamma0 = build(params)
    tree = _tree(params)
    cert = control.negative_localized(grid, coeffs, tree, _mask(params, grid), params["which"])
    ok = cert.bound > 0 and cert.exhaustive_min >= cert.bound - 1e-10
    return ExperimentResult("negative-localized", params,
                            {"which": params["which"], "lower_bound": cert.bound, "exhaustive_min": cert.exhaustive_min},
                            ok, [cert.detail])


def run_negative_noboundary(params):
    grid, coeffs, _, _ = build(params)
    tree = _tree(params)
    cert = control.negative_no_boundary(grid, coeffs, tree)
    ok = cert.data_norm_sq > 0 and cert.image_norm <= 1e-12 * cert.lambda_max
    metrics = {"image_norm": cert.image_norm, "lambda_max": cert.lambda_max, "data_norm_sq": cert.data_norm_sq,
               "internal_observation": cert.internal_observation}
    rows = [[i, v] for i, v in enumerate(cert.kernel_vector)]
    return ExperimentResult("negative-noboundary", params, metrics, ok,
                            [f"kernel image {cert.image_norm:.3g} vs lambda_max {cert.lambda_max:.3g}"],
                            {"kernel.csv": (["index", "value"], rows)})


def run_reduction_check(params):
    grid, coeffs, _, gamma0 = build(params)
    tree = _tree(params)
    rep = control.reduction_check(grid, coeffs, tree, gamma0, seed=params["seed"], instances=5)
    metrics = {"roundtrip": rep.roundtrip, "cross": rep.cross, "drive": rep.drive, "duality": rep.duality,
               "hum_residual": "" if rep.hum_residual is None else rep.hum_residual}
    return ExperimentResult("reduction-check", params, metrics, rep.passed, list(rep.failures) or ["all identities hold"])


RUNNERS = {
    "condition-check": run_condition_check,
    "gamma0": run_gamma0,
    "identity-residual": run_identity_residual,
    "duality-check": run_duality_check,
    "observability": run_observability,
    "hum": run_hum,
    "negative-classical": run_negative_classical,
    "negative-localized": run_negative_localized,
    "negative-noboundary": run_negative_noboundary,
    "reduction-check": run_reduction_check,
}


# ---------------------------------------------------------------- output


def write_outputs(result: ExperimentResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    keys = sorted(k for k in result.params if k != "description")
    header = ["experiment", "verdict"] + keys + sorted(result.metrics)
    row = [result.experiment, _fmt(result.verdict)] + [_fmt(result.params[k]) for k in keys]
    row += [_fmt(result.metrics[k]) for k in sorted(result.metrics)]
    with open(out / "result.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerow(row)
    lines = [f"experiment: {result.experiment}", f"verdict: {'PASS' if result.verdict else 'FAIL'}", "",
             "parameters:"]
    lines += [f"  {k} = {_fmt(result.params[k])}" for k in keys]
    lines += ["", "measured:"] + [f"  {k} = {_fmt(result.metrics[k])}" for k in sorted(result.metrics)]
    if result.notes:
        lines += ["", "notes:"] + [f"  {n}" for n in result.notes]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    for name, (head, rows) in result.tables.items():
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            w.writerows([[_fmt(v) for v in r] for r in rows])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swave", description="Stochastic wave control experiments on a binary tree.")
    p.add_argument("experiment", choices=EXPERIMENTS + ("presets",))
    p.add_argument("--config", help="INI file with a [swave] section")
    p.add_argument("--preset", help="named parameter set (see `swave presets`)")
    p.add_argument("--out", help="output directory (default swave-out/<experiment>)")
    for key in sorted(INT_KEYS):
        p.add_argument(f"--{key}", type=int)
    for key in sorted(FLOAT_KEYS):
        p.add_argument(f"--{key}", type=float)
    for key in sorted(STR_KEYS - {"preset"}):
        p.add_argument(f"--{key}")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if args.experiment == "presets":
        sys.stdout.write(list_presets())
        return 0
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("experiment", "config", "out") and v is not None}
    try:
        params = resolve_params(args.preset, args.config, overrides, args.experiment)
        start = time.perf_counter()
        result = RUNNERS[args.experiment](params)
    except ConfigError as exc:
        print(f"swave: parse error: {exc}", file=sys.stderr)
        return 2
    except PreconditionError as exc:
        print(f"swave: {exc}", file=sys.stderr)
        return 3
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"swave: numerical failure: {exc}", file=sys.stderr)
        return 4
    out = Path(args.out) if args.out else Path("swave-out") / args.experiment
    write_outputs(result, out)
    elapsed = time.perf_counter() - start
    print(f"{result.experiment}: {'PASS' if result.verdict else 'FAIL'} ({elapsed:.2f} s) -> {out}")
    for note in result.notes:
        print(f"  {note}")
    return 0 if result.verdict else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
