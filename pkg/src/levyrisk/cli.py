"""Command-line front end: ``levyrisk run --config FILE`` and ``levyrisk presets``.

Exit codes: 0 all declared checks pass, 1 a tolerance check failed, 2 the
config could not be parsed or validated (no CSV is written in that case).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import presets
from .convergence_lab import (
    CSV_COLUMNS,
    ConvergenceExperiment,
    run_convergence,
    stopped_variant,
    trend_summary,
)
from .density_engine import GirsanovCoefficients, compensator_check, martingale_check
from .finite_duality import (
    DensityVector,
    PositionGrid,
    fenchel_biconjugate,
    minimal_penalty,
    penalty_from_preset,
    risk_from_penalty,
    simplex_grid,
)
from .levy_model import RngStream
from .penalty_risk import (
    RiskEvaluator,
    RiskProblem,
    SearchFamily,
    brownian_terminal,
    convexity_evidence,
    feature_sampler,
    minimality_evidence,
    penalty_quadrature,
    penalty_value,
)
from .presets import ConfigError

log = logging.getLogger("levyrisk")

EXPERIMENTS = ("finite-duality", "martingale", "compensator", "qv-convergence", "penalty",
               "risk", "convexity", "minimality")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "pass" if v else "fail"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Outcome:
    """CSV rows plus check results for one experiment."""

    def __init__(self, columns):
        self.columns = list(columns)
        self.rows: list[list] = []
        self.checks: list[tuple[str, bool]] = []

    def row(self, *values):
        self.rows.append(list(values))

    def check(self, name: str, ok: bool):
        self.checks.append((name, bool(ok)))

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()


def _require(cfg, key):
    if key not in cfg:
        raise ConfigError(f"missing required field {key!r}")
    return cfg[key]


def _int(cfg, key, default):
    try:
        v = int(cfg.get(key, default))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} must be an integer") from exc
    return v


def _float(cfg, key, default):
    try:
        return float(cfg.get(key, default))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} must be a number") from exc


def _family(cfg) -> SearchFamily:
    fam = cfg.get("family", {"theta0": [-1.0, 1.0, 21]})
    try:
        return SearchFamily.box(tuple(fam.get("theta0", (-1.0, 1.0, 21))),
                                tuple(fam.get("theta1", (0.0, 0.0, 1))))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid family: {exc}") from exc


def _position(spec):
    kind = spec.get("kind")
    if kind == "linear_brownian":
        a = float(spec.get("scale", 1.0))
        return lambda paths: a * paths.brownian[:, -1]
    if kind == "constant":
        c = float(spec.get("value", 0.0))
        return lambda paths: np.full(paths.n_paths, c)
    if kind == "jump_count":
        a = float(spec.get("scale", 1.0))
        return lambda paths: a * paths.jump_counts()
    if kind == "level":
        a = float(spec.get("scale", 1.0))
        return lambda paths: a * paths.level[:, -1]
    raise ConfigError(f"unknown position kind {kind!r}")


# --------------------------------------------------------------------------
# experiments


def _finite_duality(cfg, rng_seed, n_paths):
    space = presets.space_from(_require(cfg, "space"))
    try:
        pen = penalty_from_preset(space, _require(cfg, "penalty"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tol = _float(cfg, "tolerance", 1e-6)
    dens = cfg.get("densities", {"grid": 4})
    sup = space.support
    if isinstance(dens, dict) and "grid" in dens:
        qs = simplex_grid(sup.size, int(dens["grid"]))
    elif isinstance(dens, dict) and "random" in dens:
        gen = np.random.default_rng(rng_seed)
        qs = gen.dirichlet(np.full(sup.size, 2.0), int(dens["random"]))
    elif isinstance(dens, list):
        qs = np.asarray(dens, dtype=float)
    else:
        raise ConfigError("densities must be {'grid': n}, {'random': n} or a list")
    rho = pen.risk
    if rho is None:
        raise ConfigError("finite penalty without a closed-form risk measure")
    grid = PositionGrid(bound=_float(cfg, "position_bound", 8.0),
                        levels=tuple(cfg.get("levels", (2, 3, 4))))
    out = Outcome(["operation", "input_id", "value", "gap", "tolerance", "pass"])
    for i, q in enumerate(qs):
        full = np.zeros(space.size)
        full[sup] = q
        try:
            z = DensityVector.from_probabilities(space, full)
        except ValueError as exc:
            raise ConfigError(f"density {i}: {exc}") from exc
        psi = pen.evaluate(z)
        star = minimal_penalty(space, rho, z, grid)
        ok = star <= psi + tol
        if pen.name in ("worst_case", "zero"):
            ok = ok and abs(star) <= tol
        out.row("minimal_penalty", f"q{i}", star, psi - star, tol, ok)
        out.check(f"minimal_penalty q{i}", ok)
        if cfg.get("biconjugate"):
            bic = fenchel_biconjugate(space, pen, z)
            ok = abs(bic - psi) <= tol
            out.row("fenchel_biconjugate", f"q{i}", bic, psi - bic, tol, ok)
            out.check(f"biconjugate q{i}", ok)
    for j, x in enumerate(cfg.get("positions", [])):
        x = np.asarray(x, dtype=float)
        val = risk_from_penalty(space, pen, x, _int(cfg, "grid_resolution", 24))
        exact = float(rho(x)[0])
        ok = abs(val - exact) <= tol
        out.row("risk_from_penalty", f"x{j}", val, exact - val, tol, ok)
        out.check(f"risk x{j}", ok)
    return out


def _martingale(cfg, seed, n_paths):
    model = presets.model_from(_require(cfg, "model"))
    theta = presets.coefficients_from(_require(cfg, "theta"))
    theta.admissibility(model, max(cfg.get("times", [1.0])))
    out = Outcome(["t", "estimate", "se", "pass"])
    for k, t in enumerate(cfg.get("times", [1.0])):
        est = martingale_check(model, theta, float(t), n_paths, RngStream(seed, k),
                               steps=_int(cfg, "steps", 50))
        ok = abs(est.value - 1.0) <= 3.0 * est.se
        out.row(float(t), est.value, est.se, ok)
        out.check(f"martingale t={t}", ok)
    return out


def _compensator(cfg, seed, n_paths):
    model = presets.model_from(_require(cfg, "model"))
    theta = presets.coefficients_from(_require(cfg, "theta"))
    atom = _int(cfg, "atom", 0)
    if not 0 <= atom < len(model.atoms):
        raise ConfigError(f"unknown atom index {atom}")
    res = compensator_check(model, theta, atom, n_paths, RngStream(seed),
                            horizon=_float(cfg, "horizon", 1.0), steps=_int(cfg, "steps", 20))
    ok = abs(res.empirical.value - res.target) <= 3.0 * res.empirical.se + 1e-12
    out = Outcome(["atom", "size", "empirical_rate", "se", "target", "pass"])
    out.row(atom, model.atoms[atom].size, res.empirical.value, res.empirical.se, res.target, ok)
    out.check("compensator", ok)
    return out


def _sequence_rule(cfg, base: GirsanovCoefficients):
    seq = cfg.get("sequence", {"rule": "constant"})
    rule = seq.get("rule")
    c0 = float(base.theta0_at(0.0))
    c1 = float(base.theta1_at(0.0, 1.0))
    if rule == "constant":
        return lambda n: base
    if rule == "theta0_plus_inv_n":
        return lambda n: GirsanovCoefficients.constant(c0 + 1.0 / n, c1)
    if rule == "theta1_scale":
        return lambda n: GirsanovCoefficients.constant(c0, c1 * (1.0 + 1.0 / n))
    raise ConfigError(f"unknown sequence rule {rule!r}")


def _qv_convergence(cfg, seed, n_paths):
    model = presets.model_from(_require(cfg, "model"))
    base = presets.coefficients_from(_require(cfg, "theta"))
    try:
        exp = ConvergenceExperiment(base, _sequence_rule(cfg, base),
                                    [int(n) for n in cfg.get("n_values", [1, 2, 4, 8])],
                                    _float(cfg, "epsilon", 0.01), n_paths, RngStream(seed))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    horizon, steps = _float(cfg, "horizon", 1.0), _int(cfg, "steps", 50)
    level = cfg.get("stopping_level")
    if level is None:
        rows = run_convergence(exp, model, horizon, steps)
    else:
        rows = stopped_variant(exp, float(level), model, horizon, steps)
    out = Outcome(CSV_COLUMNS)
    for r in rows:
        out.row(r.n, r.l1_mean, r.l1_se, r.qv_exceed_prob, r.qv_se)
    trend = trend_summary(rows, _float(cfg, "alpha", 0.05))
    out.check("L1 decreasing", trend["l1_decreasing"])
    out.check("QV exceedance decreasing", trend["qv_decreasing"])
    out.check("final exceedance below alpha", trend["final_below_alpha"])
    return out


def _penalty(cfg, seed, n_paths):
    model = presets.model_from(_require(cfg, "model"))
    theta = presets.coefficients_from(_require(cfg, "theta"))
    spec = presets.penalty_spec_from(cfg.get("penalty", "entropic"))
    horizon = _float(cfg, "horizon", 1.0)
    quad = penalty_quadrature(theta, spec, model, horizon)
    est = penalty_value(theta, spec, model, horizon, n_paths, RngStream(seed),
                        steps=_int(cfg, "steps", 50))
    if math.isinf(quad):
        ok = math.isinf(est.value)
    else:
        ok = abs(est.value - quad) <= 3.0 * est.se + 1e-12
    out = Outcome(["theta", "mc_estimate", "se", "quadrature", "pass"])
    out.row(theta.label, est.value, est.se, quad, ok)
    out.check("penalty routes agree", ok)
    return out


def _risk(cfg, seed, n_paths):
    model = presets.model_from(_require(cfg, "model"))
    spec = presets.penalty_spec_from(cfg.get("penalty", "entropic"))
    problem = RiskProblem(model, _float(cfg, "horizon", 1.0),
                          _position(_require(cfg, "position")), spec, _family(cfg),
                          clip=_float(cfg, "clip", 8.0), steps=_int(cfg, "steps", 20))
    ev = RiskEvaluator.simulate(problem, n_paths, RngStream(seed))
    budget = _int(cfg, "budget", ev.family.size)
    if budget < ev.family.size:
        raise ConfigError(f"budget {budget} below family size {ev.family.size}")
    res = ev.evaluate(budget=budget)
    out = Outcome(["theta0", "theta1", "expected_loss", "penalty", "objective"])
    for i, a in enumerate(ev.family.theta0):
        for j, b in enumerate(ev.family.theta1):
            out.row(a, b, res.expectation[i, j], res.penalty[i, j], res.grid[i, j])
    out.row(res.theta[0], res.theta[1], "argmax", res.se, res.value)
    if cfg.get("require_interior"):
        out.check("argmax interior", not res.on_boundary)
    if "expected" in cfg:
        exp = cfg["expected"]
        tol = max(3.0 * res.se, float(exp.get("tolerance", 0.0)))
        out.check("risk value", abs(res.value - float(exp["value"])) <= tol)
    return out


def _convexity(cfg, seed, n_paths):
    model = presets.model_from(_require(cfg, "model"))
    spec = presets.penalty_spec_from(cfg.get("penalty", "entropic"))
    trials = _int(cfg, "trials", 10)
    horizon = _float(cfg, "horizon", 1.0)
    lo0, hi0 = cfg.get("theta0_range", (-1.0, 1.0))
    lo1, hi1 = cfg.get("theta1_range", (-0.5, 1.0))
    gen = np.random.default_rng(seed)
    out = Outcome(["trial", "theta_a", "theta_b", "lambda", "mixture", "combination",
                   "margin", "margin_se", "pass"])
    passed = 0
    for k in range(trials):
        a = GirsanovCoefficients.constant(gen.uniform(lo0, hi0), gen.uniform(lo1, hi1))
        b = GirsanovCoefficients.constant(gen.uniform(lo0, hi0), gen.uniform(lo1, hi1))
        lam = float(gen.uniform())
        rep = convexity_evidence(a, b, lam, spec, model, horizon, n_paths,
                                 RngStream(seed, k + 1), steps=_int(cfg, "steps", 50))
        passed += rep.holds
        out.row(k, a.label, b.label, lam, rep.mixture.value, rep.combination,
                rep.margin.value, rep.margin.se, rep.holds)
    out.check("convexity pass fraction",
              passed >= math.ceil(_float(cfg, "min_pass_fraction", 0.96) * trials - 1e-9))
    return out


def _minimality(cfg, seed, n_paths):
    model = presets.model_from(_require(cfg, "model"))
    spec = presets.penalty_spec_from(cfg.get("penalty", "entropic"))
    problem = RiskProblem(model, _float(cfg, "horizon", 1.0), brownian_terminal, spec,
                          _family(cfg), clip=_float(cfg, "clip", 8.0),
                          steps=_int(cfg, "steps", 20))
    sampler = feature_sampler({"W_T": brownian_terminal}, _float(cfg, "bound", 1.0))
    thetas = [tuple(t) for t in cfg.get("thetas", [[0.0, 0.0]])]
    rep = minimality_evidence(problem, thetas, sampler, cfg.get("levels", [1, 2, 3]), n_paths,
                              RngStream(seed), optimizer_budget=cfg.get("budget"))
    out = Outcome(["theta0", "theta1", "level", "lower_bound", "penalty", "gap", "pass"])
    for r in rep.rows:
        out.row(r.theta[0], r.theta[1], r.level, r.lower_bound, r.penalty, r.gap, r.within)
    out.check("lower bound below penalty", all(r.within for r in rep.rows))
    out.check("gap non-increasing", rep.monotone)
    return out


RUNNERS = {
    "finite-duality": _finite_duality,
    "martingale": _martingale,
    "compensator": _compensator,
    "qv-convergence": _qv_convergence,
    "penalty": _penalty,
    "risk": _risk,
    "convexity": _convexity,
    "minimality": _minimality,
}


def load_config(path, seed=None, n_paths=None) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if "preset" in cfg:
        base = presets.experiment_from(cfg["preset"])
        base.update({k: v for k, v in cfg.items() if k != "preset"})
        cfg = base
    if seed is not None:
        cfg["seed"] = seed
    if n_paths is not None:
        cfg["n_paths"] = n_paths
    kind = _require(cfg, "experiment")
    if kind not in RUNNERS:
        raise ConfigError(f"unknown experiment {kind!r}; expected one of {EXPERIMENTS}")
    if "seed" not in cfg:
        raise ConfigError("seed is mandatory")
    return cfg


def run(config_path, seed=None, n_paths=None, out_dir=".", quiet=False, preset_files=()) -> int:
    """Execute one experiment; returns the process exit code."""
    try:
        for f in preset_files:
            presets.register(presets.load_user_presets(f))
        cfg = load_config(config_path, seed, n_paths)
        seed_v = _int(cfg, "seed", 0)
        paths_v = _int(cfg, "n_paths", 10000)
        if paths_v < 1:
            raise ConfigError("n_paths must be positive")
        outcome = RUNNERS[cfg["experiment"]](cfg, seed_v, paths_v)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except ValueError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{cfg['experiment']}.csv"
    target.write_text(outcome.csv_text())
    failed = [name for name, ok in outcome.checks if not ok]
    if not quiet:
        print(f"{cfg['experiment']}: {len(outcome.checks) - len(failed)} passed, "
              f"{len(failed)} failed -> {target}")
    for name in failed:
        print(json.dumps({"error": "tolerance", "check": name}), file=sys.stderr)
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="levyrisk",
                                     description="Penalty functions and risk measures for Levy densities")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--paths", type=int)
    p_run.add_argument("--out", default=".")
    p_run.add_argument("--quiet", action="store_true")
    p_run.add_argument("--presets", action="append", default=[], help="extra preset file")
    p_list = sub.add_parser("presets", help="list bundled and user presets")
    p_list.add_argument("--presets", action="append", default=[], help="extra preset file")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.WARNING)
    if args.command == "presets":
        sys.stdout.write(presets.list_presets(args.presets))
        return 0
    return run(args.config, args.seed, args.paths, args.out, args.quiet, args.presets)


if __name__ == "__main__":
    sys.exit(main())
