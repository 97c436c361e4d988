"""Scenario runner: config-driven pipeline from classification to report.

Exit codes: 0 all checks pass, 1 check failure, 2 solver failure,
3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft7Validator

from . import artifacts, verify
from .artifacts import ArtifactError, write_csv, write_json
from .background import Background, make_background
from .elliptic import (EllipticSolution, SolverError, prescribe_scalar_curvature,
                       solve_harmonic_decay, solve_steady_negative, solve_yamabe_profile)
from .flow import ConformalFlowResult, FlowControls, Trajectory, run, run_conformal
from .grid import build_grid
from .report import emit_report
from .yamabe import YamabeEstimate, estimate_yamabe


class ConfigError(RuntimeError):
    pass


SCENARIO_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["name", "grid", "background"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "rng_seed": {"type": "integer"},
        "grid": {
            "type": "object",
            "required": ["dimension", "nodes", "r_max", "grading"],
            "additionalProperties": False,
            "properties": {
                "dimension": {"type": "integer", "minimum": 3},
                "nodes": {"type": "integer", "minimum": 64},
                "r_max": {"type": "number", "exclusiveMinimum": 1},
                "grading": {"type": "number", "minimum": 1},
            },
        },
        "background": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"type": "string"},
                "params": {"type": "object"},
            },
        },
        "yamabe": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "ball_radii": {"type": "array", "items": {"type": "number"}},
            },
        },
        "elliptic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "equation": {
                    "oneOf": [
                        {"type": "string"},
                        {"type": "array", "items": {"type": "string"}},
                    ]
                },
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "flow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_end": {"type": "number", "minimum": 1},
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "dt_warmup": {"type": "number", "exclusiveMinimum": 0},
                "warmup_until": {"type": "number", "exclusiveMinimum": 0},
                "dt_min": {"type": "number", "exclusiveMinimum": 0},
                "newton_tol": {"type": "number", "exclusiveMinimum": 0},
                "boundary_value": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "comparison": {
            "type": "object",
            "required": ["offset", "boundary"],
            "additionalProperties": False,
            "properties": {
                "offset": {"type": "number", "exclusiveMinimum": 0},
                "boundary": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "rho_flow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"type": "string",
                                 "enum": ["truncated_background", "augmented_well"]},
                        "depth": {"type": "number", "exclusiveMinimum": 0},
                        "width": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name"],
                "properties": {"name": {"type": "string"}},
            },
        },
    },
}

_POSITIVE_CHECK_KEYS = ("tol", "cap", "dt_probe", "min_order", "rate_band",
                        "far_tol", "ball_radius", "k_radius")


def load_scenario(source) -> dict:
    """Load and validate a scenario config from a path or bundled name."""
    if isinstance(source, dict):
        config = dict(source)
    else:
        path = Path(source)
        if not path.exists():
            bundled = resources.files("yamabelab.scenarios").joinpath(f"{source}.json")
            if bundled.is_file():
                config = json.loads(bundled.read_text())
            else:
                raise ConfigError(f"no scenario file or bundled scenario named {source!r}")
        else:
            try:
                config = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from exc
    errors = sorted(Draft7Validator(SCENARIO_SCHEMA).iter_errors(config),
                    key=lambda e: list(e.path))
    if errors:
        locus = "/".join(str(p) for p in errors[0].path) or "<root>"
        raise ConfigError(f"invalid scenario config at {locus}: {errors[0].message}")
    for check in config.get("checks", []):
        for key in _POSITIVE_CHECK_KEYS:
            if key in check and not (isinstance(check[key], (int, float)) and check[key] > 0):
                raise ConfigError(f"check {check['name']!r}: {key} must be positive")
    config.setdefault("rng_seed", 0)
    return config


def _flow_controls(config) -> FlowControls:
    spec = dict(config.get("flow", {}))
    spec.pop("t_end", None)
    return FlowControls(**spec)


def build_rho_target(bg: Background, spec: dict) -> np.ndarray:
    """Nonpositive compactly supported curvature target for the rho change."""
    r = bg.grid.nodes
    target = np.where(r <= bg.k_radius, np.minimum(bg.R0, 0.0), 0.0)
    if spec.get("kind", "truncated_background") == "augmented_well":
        width = float(spec.get("width", bg.k_radius / 2.0))
        depth = float(spec.get("depth", 0.5))
        if width > bg.k_radius:
            raise ConfigError("augmented well must be supported inside k_radius")
        target = target - depth * np.clip(1.0 - (r / width) ** 2, 0.0, None) ** 3
    return target


@dataclass
class ScenarioResult:
    config: dict
    background: Background
    estimate: YamabeEstimate | None = None
    solutions: dict = field(default_factory=dict)
    trajectories: dict = field(default_factory=dict)
    rho: ConformalFlowResult | None = None
    verdicts: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(v.passed for v in self.verdicts)


class ScenarioPipeline:
    """Stage-wise executor; every stage writes its artifacts under out_dir/name."""

    def __init__(self, config: dict, out_dir, save: bool = True):
        self.config = config
        self.save = save
        self.out = Path(out_dir) / config["name"]
        grid_spec = config["grid"]
        grid = build_grid(grid_spec["dimension"], grid_spec["nodes"],
                          grid_spec["r_max"], grid_spec["grading"])
        bg_spec = config["background"]
        bg = make_background(grid, bg_spec["kind"], bg_spec.get("params", {}))
        self.result = ScenarioResult(config=config, background=bg)
        if save:
            self.out.mkdir(parents=True, exist_ok=True)
            write_json(self.out / "scenario.json", config)

    # -- stages ---------------------------------------------------------

    def classify(self) -> YamabeEstimate:
        if self.result.estimate is not None:
            return self.result.estimate
        spec = self.config.get("yamabe", {})
        t0 = time.perf_counter()
        estimate = estimate_yamabe(self.result.background,
                                   tol=float(spec.get("tol", 1e-3)),
                                   ball_radii=spec.get("ball_radii"),
                                   rng_seed=self.config["rng_seed"])
        self.result.timings["yamabe"] = time.perf_counter() - t0
        self.result.estimate = estimate
        if self.save:
            write_json(self.out / "yamabe.json", {
                "sign": estimate.sign,
                "lower": estimate.lower,
                "upper": estimate.upper,
            })
            write_json(self.out / "yamabe_details.json", {
                "rng_seed": self.config["rng_seed"],
                "ball_radii": estimate.ball_radii,
                "per_ball_upper": estimate.per_ball_upper,
                "ground_eigenvalue": estimate.ground_eigenvalue,
            })
            write_csv(self.out / "witness.csv", ["r", "value"],
                      [self.result.background.grid.nodes, estimate.witness])
        return estimate

    def solve_elliptic(self) -> dict:
        bg = self.result.background
        spec = self.config.get("elliptic", {})
        equations = spec.get("equation", [])
        if isinstance(equations, str):
            equations = [equations]
        tol = float(spec.get("tolerance", 1e-8))
        t0 = time.perf_counter()
        for eq in equations:
            if eq in self.result.solutions:
                continue
            if eq == "steady_negative":
                sol = solve_steady_negative(bg, tol=tol)
            elif eq == "harmonic_decay":
                sol = solve_harmonic_decay(bg, tol=tol)
            elif eq == "yamabe_profile":
                sign = self.classify().sign
                sol = solve_yamabe_profile(bg, sign, tol=tol)
            else:
                raise ConfigError(f"unknown elliptic equation {eq!r}")
            self.result.solutions[eq] = sol
            if self.save:
                artifacts.save_solution(sol, bg.grid.nodes, self.out / "elliptic")
        self.result.timings["elliptic"] = time.perf_counter() - t0
        return self.result.solutions

    def run_flows(self) -> dict:
        bg = self.result.background
        config = self.config
        if "flow" not in config:
            return self.result.trajectories
        controls = _flow_controls(config)
        t_end = float(config["flow"].get("t_end", 100.0))

        if "main" not in self.result.trajectories:
            t0 = time.perf_counter()
            traj = run(bg, t_end, controls)
            self.result.timings["flow_main"] = time.perf_counter() - t0
            self.result.trajectories["main"] = traj
            if self.save:
                artifacts.save_trajectory(traj, self.out / "run")

        if "comparison" in config and "pair" not in self.result.trajectories:
            pair_spec = config["comparison"]
            from dataclasses import replace
            pair_controls = replace(controls, boundary_value=float(pair_spec["boundary"]))
            initial = self.result.trajectories["main"].initial.u + float(pair_spec["offset"])
            pair = run(bg, t_end, pair_controls, initial=initial)
            self.result.trajectories["pair"] = pair
            if self.save:
                artifacts.save_trajectory(pair, self.out / "run_pair")

        if "rho_flow" in config and self.result.rho is None:
            target = build_rho_target(bg, config["rho_flow"].get("target", {}))
            tol = float(self.config.get("elliptic", {}).get("tolerance", 1e-8))
            rho_sol = prescribe_scalar_curvature(bg, target, tol=tol)
            self.result.solutions["prescribed_curvature"] = rho_sol
            t0 = time.perf_counter()
            rho = run_conformal(bg, rho_sol, t_end, controls)
            self.result.timings["flow_rho"] = time.perf_counter() - t0
            self.result.rho = rho
            for name, traj in (("rho_u", rho.u_transplant), ("rho_v", rho.v),
                               ("rho_vb", rho.v_lower), ("rho_vB", rho.v_upper)):
                self.result.trajectories[name] = traj
                if self.save:
                    artifacts.save_trajectory(traj, self.out / name)
            if self.save:
                artifacts.save_solution(rho_sol, bg.grid.nodes, self.out / "elliptic")
        return self.result.trajectories

    # -- checks ----------------------------------------------------------

    def _need_traj(self, name: str, check: str) -> Trajectory:
        traj = self.result.trajectories.get(name)
        if traj is None:
            raise ConfigError(f"check {check!r} needs the {name!r} trajectory; "
                              "configure the corresponding flow")
        return traj

    def _need_solution(self, tag: str, check: str) -> EllipticSolution:
        sol = self.result.solutions.get(tag)
        if sol is None:
            raise ConfigError(f"check {check!r} needs the {tag!r} elliptic solution; "
                              "add it to the elliptic equations")
        return sol

    def run_checks(self) -> list:
        bg = self.result.background
        verdicts = []
        for spec in self.config.get("checks", []):
            name = spec["name"]
            k_radius = float(spec.get("k_radius", bg.k_radius))
            if name == "stationary":
                v = verify.check_stationary(self._need_traj("main", name), spec["tol"])
            elif name == "curvature_lower":
                v = verify.check_curvature_lower(self._need_traj("main", name), spec["tol"])
            elif name == "rescaled_monotone":
                v = verify.check_rescaled_monotone(self._need_traj("main", name), spec["tol"])
            elif name == "comparison":
                v = verify.check_comparison(self._need_traj("main", name),
                                            self._need_traj("pair", name), spec["tol"])
            elif name == "lower_envelope":
                v = verify.check_lower_envelope(self._need_traj("main", name),
                                                self._need_solution("steady_negative", name),
                                                spec["tol"])
            elif name == "steady_limit":
                v = verify.check_steady_limit(self._need_traj("main", name),
                                              self._need_solution("steady_negative", name),
                                              k_radius, spec["tol"],
                                              rate_band=float(spec.get("rate_band", 0.10)),
                                              far_tol=spec.get("far_tol"))
            elif name == "rescaled_vanishing":
                v = verify.check_rescaled_vanishing(self._need_traj("main", name), spec["tol"])
            elif name == "profile_convergence":
                v = verify.check_profile_convergence(self._need_traj("main", name),
                                                     self._need_solution("harmonic_decay", name),
                                                     k_radius, spec["tol"])
            elif name == "harnack":
                target = spec.get("trajectory", "main")
                key = {"main": "main", "u_rho": "rho_u", "v": "rho_v"}.get(target)
                if key is None:
                    raise ConfigError(f"harnack trajectory must be main/u_rho/v, got {target!r}")
                v = verify.check_harnack(self._need_traj(key, name),
                                         float(spec.get("ball_radius", 5.0)), spec["cap"])
            elif name == "curvature_sandwich":
                v = verify.check_curvature_sandwich(self._need_traj("rho_v", name), spec["tol"])
            elif name == "sandwich_bounds":
                v = verify.check_sandwich_bounds(self._need_traj("rho_u", name),
                                                 self._need_traj("rho_vb", name),
                                                 self._need_traj("rho_vB", name), spec["tol"])
            elif name == "max_on_core":
                v = verify.check_max_on_core(self._need_traj("rho_v", name), k_radius)
            elif name == "scalar_evolution":
                v = verify.check_scalar_evolution(self._need_traj("main", name),
                                                  float(spec.get("dt_probe", 0.02)),
                                                  min_order=float(spec.get("min_order", 0.9)))
            else:
                raise ConfigError(f"unknown check {name!r}")
            verdicts.append(v)
        self.result.verdicts = verdicts
        if self.save:
            write_json(self.out / "verdicts.json", [v.to_dict() for v in verdicts])
        return verdicts

    def load_artifacts_for_checks(self) -> None:
        """Rehydrate trajectories and solutions from the output directory."""
        bg = self.result.background
        if (self.out / "run" / "meta.json").exists():
            self.result.trajectories["main"] = artifacts.load_trajectory(self.out / "run", bg)
        if (self.out / "run_pair" / "meta.json").exists():
            self.result.trajectories["pair"] = artifacts.load_trajectory(self.out / "run_pair", bg)
        elliptic_dir = self.out / "elliptic"
        for tag in ("steady_negative", "harmonic_decay", "yamabe_profile", "prescribed_curvature"):
            if (elliptic_dir / f"{tag}.csv").exists():
                self.result.solutions[tag] = artifacts.load_solution(elliptic_dir, tag)
        rho_sol = self.result.solutions.get("prescribed_curvature")
        if rho_sol is not None and (self.out / "rho_v" / "meta.json").exists():
            from .background import conformal_background
            bg_rho = conformal_background(bg, rho_sol.values)
            for name in ("rho_u", "rho_v", "rho_vb", "rho_vB"):
                if (self.out / name / "meta.json").exists():
                    self.result.trajectories[name] = artifacts.load_trajectory(
                        self.out / name, bg_rho)


def run_scenario(config: dict, out_dir, save: bool = True) -> ScenarioResult:
    """Full pipeline: classify, elliptic solves, flow runs, checks."""
    pipeline = ScenarioPipeline(config, out_dir, save=save)
    pipeline.classify()
    pipeline.solve_elliptic()
    pipeline.run_flows()
    pipeline.run_checks()
    return pipeline.result


def _print_verdict_table(verdicts) -> None:
    if not verdicts:
        print("no checks configured")
        return
    width = max(len(v.check_name) for v in verdicts) + 2
    for v in verdicts:
        status = "PASS" if v.passed else "FAIL"
        print(f"{v.check_name:<{width}}{status:<6}margin={v.margin:+.3e}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="yamabelab",
        description="Yamabe-flow laboratory on radial asymptotically flat backgrounds")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("simulate", "run the configured flow(s) and store trajectories"),
        ("elliptic", "run the configured elliptic solves"),
        ("yamabe", "estimate the Yamabe quotient sign"),
        ("verify", "run checks against stored artifacts"),
        ("report", "assemble report, curve CSVs, and figures"),
        ("all", "full pipeline: classify, solve, simulate, verify, report"),
    ):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", required=True,
                       help="scenario JSON path or bundled scenario name")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
    args = parser.parse_args(argv)

    try:
        config = load_scenario(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3

    try:
        if args.command == "yamabe":
            pipeline = ScenarioPipeline(config, args.out)
            estimate = pipeline.classify()
            print(json.dumps({"sign": estimate.sign, "lower": estimate.lower,
                              "upper": estimate.upper}))
            return 0
        if args.command == "elliptic":
            pipeline = ScenarioPipeline(config, args.out)
            solutions = pipeline.solve_elliptic()
            for tag, sol in solutions.items():
                print(f"{tag}: residual_sup={sol.residual_sup:.3e} "
                      f"decay={sol.decay_exponent:.4f} iters={sol.newton_iters}")
            return 0
        if args.command == "simulate":
            pipeline = ScenarioPipeline(config, args.out)
            pipeline.solve_elliptic()
            trajectories = pipeline.run_flows()
            for name, traj in trajectories.items():
                print(f"{name}: {traj.summary['t'].size} steps to t={traj.t_end:g}"
                      + (" [aborted]" if traj.aborted else ""))
            return 2 if any(t.aborted for t in trajectories.values()) else 0
        if args.command == "verify":
            pipeline = ScenarioPipeline(config, args.out)
            pipeline.load_artifacts_for_checks()
            verdicts = pipeline.run_checks()
            _print_verdict_table(verdicts)
            return 0 if all(v.passed for v in verdicts) else 1
        if args.command == "report":
            emit_report(Path(args.out) / config["name"])
            print(f"report written under {Path(args.out) / config['name']}")
            return 0
        if args.command == "all":
            result = run_scenario(config, args.out)
            _print_verdict_table(result.verdicts)
            emit_report(Path(args.out) / config["name"])
            if any(t.aborted for t in result.trajectories.values()):
                return 2
            return 0 if result.all_passed else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except (SolverError, ValueError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
