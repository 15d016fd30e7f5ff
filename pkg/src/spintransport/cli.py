"""Scenario-driven command line front end.

A scenario is a TOML file naming the body, horizon, endpoints (fixed pair or
sampled Gaussians), a task, and task settings.  Runs write CSV/JSON artifacts
into the output directory; identical scenario + seed gives byte-identical
files.

Exit status: 0 on success (including flagged non-convergence), 1 on runtime
structural failures (divergence, marginal mismatch), 2 on bad configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import ground_cost as gc
from . import steering as st
from . import transport as tp
from .rigid_body import InertiaBody, affine_pair, make_body, zero_pair
from .trajopt import ground_cost_numeric

OUTPUT_DIR_ENV = "SPINTRANSPORT_OUTPUT_DIR"

COST_KINDS = gc.KINDS
POLICY_KINDS = ("feasible-ustar", "norminv-ustarstar", "two-phase")


class ConfigError(ValueError):
    """Invalid or incomplete scenario configuration."""


_SCHEMA = {
    "task": None,
    "t_f": None,
    "seed": None,
    "body": {"J": None},
    "endpoints": {
        "fixed": {"x0": None, "x_f": None},
        "source": {"mean": None, "cov": None, "samples": None, "space": None},
        "target": {"mean": None, "cov": None, "samples": None, "space": None},
    },
    "steer": {"policy": None, "step": None},
    "ground_cost": {"n_intervals": None, "penalty_schedule": None,
                    "grad_tol": None, "max_iters": None,
                    "violation_tol": None, "step": None},
    "transport": {"cost": None, "solver": None, "epsilon": None,
                  "max_iter": None, "tol": None},
    "ensemble": {"cost": None, "solver": None, "policy": None, "step": None,
                 "epsilon": None, "max_iter": None, "tol": None},
    "output": {"directory": None},
}


def _check_keys(table: dict, schema: dict, path: str = "") -> None:
    for key, value in table.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown key {where!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a table")
            _check_keys(value, sub, where)


def _vec3(raw, where: str) -> np.ndarray:
    try:
        v = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where!r} must be a list of 3 numbers") from exc
    if v.shape != (3,):
        raise ConfigError(f"{where!r} must have exactly 3 entries")
    return v


def _covariance(raw, where: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(3)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ConfigError(f"{where!r} must be a scalar, a 3-list diagonal, or a 3x3 matrix")


class Scenario:
    """Validated scenario configuration."""

    def __init__(self, raw: dict):
        _check_keys(raw, _SCHEMA)
        self.task = raw.get("task")
        if self.task not in ("steer", "ground-cost", "transport", "ensemble"):
            raise ConfigError("task must be one of steer|ground-cost|transport|ensemble")
        if "t_f" not in raw:
            raise ConfigError("t_f is required")
        self.t_f = float(raw["t_f"])
        if self.t_f <= 0.0:
            raise ConfigError("t_f must be > 0")
        self.seed = int(raw.get("seed", 0))

        self.body: InertiaBody | None = None
        if "body" in raw:
            if "J" not in raw["body"]:
                raise ConfigError("body.J is required when [body] is present")
            try:
                self.body = make_body(_vec3(raw["body"]["J"], "body.J"))
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc

        endpoints = raw.get("endpoints", {})
        fixed = endpoints.get("fixed")
        source = endpoints.get("source")
        target = endpoints.get("target")
        if fixed is not None and (source is not None or target is not None):
            raise ConfigError("endpoints must be either fixed or sampled, not both")
        if fixed is not None:
            self.mode = "fixed"
            if "x0" not in fixed or "x_f" not in fixed:
                raise ConfigError("endpoints.fixed needs x0 and x_f")
            self.x0 = _vec3(fixed["x0"], "endpoints.fixed.x0")
            self.x_f = _vec3(fixed["x_f"], "endpoints.fixed.x_f")
        elif source is not None and target is not None:
            self.mode = "sampled"
            self.source_spec = self._gaussian(source, "endpoints.source")
            self.target_spec = self._gaussian(target, "endpoints.target")
        else:
            raise ConfigError("endpoints.fixed or endpoints.source+target is required")

        self.steer = dict(raw.get("steer", {}))
        self.ground_cost = dict(raw.get("ground_cost", {}))
        self.transport = dict(raw.get("transport", {}))
        self.ensemble = dict(raw.get("ensemble", {}))
        self.out_dir = Path(raw.get("output", {}).get("directory", "out"))

    @staticmethod
    def _gaussian(table: dict, where: str):
        for need in ("mean", "cov", "samples"):
            if need not in table:
                raise ConfigError(f"{where}.{need} is required")
        mean = _vec3(table["mean"], f"{where}.mean")
        cov = _covariance(table["cov"], f"{where}.cov")
        try:
            spec = tp.gaussian_spec(mean, cov)
        except ValueError as exc:
            raise ConfigError(f"{where}.cov: {exc}") from exc
        n = int(table["samples"])
        if n < 1:
            raise ConfigError(f"{where}.samples must be >= 1")
        space = table.get("space", "state")
        if space not in ("state", "omega"):
            raise ConfigError(f"{where}.space must be 'state' or 'omega'")
        return spec, n, space

    def require_fixed(self):
        if self.mode != "fixed":
            raise ConfigError(f"task {self.task!r} needs fixed endpoints")

    def require_sampled(self):
        if self.mode != "sampled":
            raise ConfigError(f"task {self.task!r} needs sampled endpoints")

    def cost_spec(self, settings: dict, default_kind: str = "classical") -> gc.GroundCostSpec:
        kind = settings.get("cost", default_kind)
        if kind not in COST_KINDS:
            raise ConfigError(f"cost must be one of {COST_KINDS}")
        if kind in ("euler-numeric", "euler-bounded") and self.body is None:
            raise ConfigError(f"cost kind {kind!r} requires a [body] table")
        return gc.GroundCostSpec(kind=kind, t_f=self.t_f, body=self.body)

    def sample_endpoints(self):
        # both endpoints draw with the scenario seed, so identical endpoint
        # specs produce identical supports (and zero transport cost)
        (sspec, sn, sspace) = self.source_spec
        (tspec, tn, tspace) = self.target_spec
        source = tp.sample_gaussian(sspec, sn, seed=self.seed)
        target = tp.sample_gaussian(tspec, tn, seed=self.seed)
        if sspace == "omega" or tspace == "omega":
            if self.body is None:
                raise ConfigError("space='omega' requires a [body] table")
        if sspace == "omega":
            source = tp.pushforward_inertia(source, self.body)
        if tspace == "omega":
            target = tp.pushforward_inertia(target, self.body)
        return source, target


def load_scenario(path, seed_override=None) -> Scenario:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc
    scenario = Scenario(raw)
    if seed_override is not None:
        scenario.seed = int(seed_override)
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        scenario.out_dir = Path(env_dir)
    return scenario


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _write_trajectory_csv(path: Path, traj: st.Trajectory) -> None:
    lines = ["t,x1,x2,x3,u1,u2,u3,znorm,cost"]
    znorm = np.linalg.norm(traj.states - traj.x_f, axis=1)
    for k in range(len(traj.times)):
        fields = [traj.times[k], *traj.states[k], *traj.controls[k],
                  znorm[k], traj.running_cost[k]]
        lines.append(",".join(repr(float(v)) for v in fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_steer(scenario: Scenario) -> dict:
    """Integrate the configured policy between the fixed endpoints and write
    trajectory.csv plus summary.json."""
    scenario.require_fixed()
    kind = scenario.steer.get("policy", "feasible-ustar")
    if kind not in POLICY_KINDS:
        raise ConfigError(f"steer.policy must be one of {POLICY_KINDS}")
    step = float(scenario.steer.get("step", 1e-3))
    policy = st.make_policy(kind, scenario.body, scenario.x0, scenario.x_f, scenario.t_f)
    traj = st.integrate(scenario.body, policy, scenario.x0, scenario.x_f,
                        scenario.t_f, step)
    deviation = st.norm_law_deviation(policy, traj)
    out = scenario.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_trajectory_csv(out / "trajectory.csv", traj)
    summary = {
        "task": "steer",
        "policy": kind,
        "step": step,
        "t_f": scenario.t_f,
        "terminal_error": traj.terminal_error,
        "total_cost": st.policy_cost(traj),
        "norm_law_max_deviation": deviation,
    }
    _write_json(out / "summary.json", summary)
    return summary


def run_ground_cost(scenario: Scenario) -> dict:
    """Evaluate every ground-cost route for the fixed endpoint pair and write
    summary.json with a bound-sandwich verdict."""
    scenario.require_fixed()
    x0, x_f, t_f = scenario.x0, scenario.x_f, scenario.t_f
    settings = dict(scenario.ground_cost)
    step = float(settings.pop("step", 1e-3))
    if "penalty_schedule" in settings:
        settings["penalty_schedule"] = tuple(float(r) for r in settings["penalty_schedule"])

    classical = gc.cost_classical(x0, x_f, t_f)
    upper = gc.cost_upper_bound(x0, x_f, t_f)
    pair = affine_pair(scenario.body, x_f) if scenario.body is not None else zero_pair(x_f)
    affine_free = not pair.A.any() and not pair.b.any()
    norm_invariant = gc.cost_norminv(x0, x_f, t_f) if affine_free else None

    policy = st.make_policy("feasible-ustar", scenario.body, x0, x_f, t_f)
    traj = st.integrate(scenario.body, policy, x0, x_f, t_f, step)
    ustar_cost = st.policy_cost(traj)
    lower = gc.cost_lower_bound(x0, x_f, t_f, pair, traj)

    numeric, certificate = ground_cost_numeric(scenario.body, x0, x_f, t_f, settings)
    tol = 1e-3
    if not certificate.converged:
        verdict = "non-converged"
    elif norm_invariant is not None and abs(numeric - norm_invariant) <= 0.01 * max(norm_invariant, 1e-12):
        verdict = "equality-certified"
    elif lower - tol <= numeric <= upper + tol:
        verdict = "ok"
    else:
        verdict = "violated"

    summary = {
        "task": "ground-cost",
        "t_f": t_f,
        "classical": classical,
        "norm_invariant": norm_invariant,
        "upper_bound": upper,
        "lower_bound_ustar": lower,
        "ustar_cost": ustar_cost,
        "numeric_cost": numeric,
        "numeric_violation": certificate.violation,
        "numeric_converged": certificate.converged,
        "verdict": verdict,
    }
    out = scenario.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "summary.json", summary)
    return summary


def _solve_coupling(scenario: Scenario, settings: dict, cost_matrix, source, target):
    solver = settings.get("solver", "exact")
    if solver == "exact":
        return tp.solve_exact(cost_matrix, source, target)
    if solver == "sinkhorn":
        eps = settings.get("epsilon", "auto")
        if eps == "auto":
            eps = 0.05 * float(np.median(cost_matrix.entries))
        return tp.solve_sinkhorn(cost_matrix, source, target, epsilon=float(eps),
                                 max_iter=int(settings.get("max_iter", 10000)),
                                 tol=float(settings.get("tol", 1e-9)))
    raise ConfigError("solver must be 'exact' or 'sinkhorn'")


def run_transport(scenario: Scenario) -> dict:
    """Sample the endpoint measures, assemble the cost matrix, solve the
    coupling, and write measure/cost/coupling CSVs plus summary.json."""
    scenario.require_sampled()
    source, target = scenario.sample_endpoints()
    spec = scenario.cost_spec(scenario.transport)
    matrix = gc.cost_matrix(spec, source.support, target.support)
    coupling = _solve_coupling(scenario, scenario.transport, matrix, source, target)

    out = scenario.out_dir
    out.mkdir(parents=True, exist_ok=True)
    tp.measure_to_csv(source, out / "source.csv")
    tp.measure_to_csv(target, out / "target.csv")
    gc.cost_matrix_to_csv(matrix, out / "cost_matrix.csv")
    tp.coupling_to_csv(coupling, matrix, out / "coupling.csv")
    summary = {
        "task": "transport",
        "t_f": scenario.t_f,
        "cost_kind": spec.kind,
        "seed": scenario.seed,
        "flagged_entries": [list(f) for f in matrix.flagged],
        **tp.coupling_summary(coupling),
    }
    _write_json(out / "summary.json", summary)
    return summary


def run_ensemble(scenario: Scenario) -> dict:
    """Solve the coupling, steer every matched pair, and compare the realized
    control cost against the coupling's transport cost."""
    scenario.require_sampled()
    source, target = scenario.sample_endpoints()
    settings = scenario.ensemble
    spec = scenario.cost_spec(settings, default_kind="norm-invariant")
    matrix = gc.cost_matrix(spec, source.support, target.support)
    coupling = _solve_coupling(scenario, settings, matrix, source, target)

    kind = settings.get("policy", "norminv-ustarstar")
    if kind not in POLICY_KINDS:
        raise ConfigError(f"ensemble.policy must be one of {POLICY_KINDS}")
    step = float(settings.get("step", 1e-3))
    terminal, realized, failures = tp.ensemble_steer(
        coupling, spec, policy_kind=kind, step=step, skip_divergent=True)

    out = scenario.out_dir
    out.mkdir(parents=True, exist_ok=True)
    tp.measure_to_csv(source, out / "source.csv")
    tp.measure_to_csv(target, out / "target.csv")
    tp.coupling_to_csv(coupling, matrix, out / "coupling.csv")
    tp.measure_to_csv(terminal, out / "terminal.csv")
    summary = {
        "task": "ensemble",
        "t_f": scenario.t_f,
        "cost_kind": spec.kind,
        "policy": kind,
        "step": step,
        "seed": scenario.seed,
        "transport_cost": coupling.transport_cost,
        "realized_cost": realized,
        "realized_over_transport": realized / coupling.transport_cost
        if coupling.transport_cost > 0.0 else None,
        "terminal_second_moment": tp.second_moment(terminal),
        "target_second_moment": tp.second_moment(target),
        "divergent_pairs": [list(f) for f in failures],
    }
    _write_json(out / "summary.json", summary)
    return summary


_RUNNERS = {
    "steer": run_steer,
    "ground-cost": run_ground_cost,
    "transport": run_transport,
    "ensemble": run_ensemble,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spintransport",
        description="Run a steering / ground-cost / transport scenario file.")
    parser.add_argument("scenario", help="path to a TOML scenario file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    args = parser.parse_args(argv)

    try:
        scenario = load_scenario(args.scenario, seed_override=args.seed)
        runner = _RUNNERS[scenario.task]
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        summary = runner(scenario)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (st.DivergenceError, tp.MarginalMismatchError,
            tp.EnsembleDivergenceError, tp.EpsilonTooSmallError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
