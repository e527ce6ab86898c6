"""Batch experiment runner: ``hopper <scenario> --config ... --out ... --seed ...``.

Scenarios cover bed settling, plate intrusion, (beta, gamma) sweeps,
Fourier fitting, single and multi hops on the analytic or DEM plant, the
impact-velocity sweep, the foot-size study, and the intrusion-speed
comparison.  All scenario parameters live in JSON config files; runs are
reproducible from config plus seed.  ``hopper report`` aggregates an
artifact directory into markdown and CSV summaries.

Exit codes: 0 ok, 1 invariant failure, 2 config error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import control, dem, gait, ground, hopper, intrusion

SCENARIOS = (
    "settle", "intrude", "sweep", "fit", "hop", "multihop",
    "impact_sweep", "foot_sweep", "speed_compare",
)

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentConfig:
    scenario: str
    plant: str = "analytic"
    params: dict = field(default_factory=dict)
    seed: int = 0
    out_dir: str = "artifacts"

    @classmethod
    def from_dict(cls, payload: dict, seed: int | None = None,
                  out_dir: str | None = None) -> "ExperimentConfig":
        problems = []
        scenario = payload.get("scenario")
        if scenario not in SCENARIOS:
            problems.append(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
        plant = payload.get("plant", "analytic")
        if plant not in ("analytic", "dem"):
            problems.append(f"plant must be analytic or dem, got {plant!r}")
        params = payload.get("params", {})
        if not isinstance(params, dict):
            problems.append("params must be an object")
            params = {}
        for key in ("grid_csv", "model_json", "world_profile"):
            p = params.get(key)
            if p and not str(p).startswith("builtin:") and not Path(p).exists():
                problems.append(f"params.{key} refers to a missing file: {p}")
        required = {
            "hop": ["V0"], "multihop": ["V0", "n_hops"],
            "impact_sweep": ["velocities"], "foot_sweep": ["sides_cm"],
            "fit": ["order"],
        }
        for key in required.get(scenario or "", []):
            if key not in params:
                problems.append(f"scenario {scenario} requires params.{key}")
        if problems:
            raise ConfigError(problems)
        return cls(
            scenario=scenario, plant=plant, params=params,
            seed=payload.get("seed", 0) if seed is None else seed,
            out_dir=payload.get("out_dir", "artifacts") if out_dir is None else out_dir,
        )

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "plant": self.plant,
                "params": self.params, "seed": self.seed,
                "out_dir": self.out_dir}


def _write_summary(out: Path, payload: dict) -> None:
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=float)
        fh.write("\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _hopper_params(cfg: ExperimentConfig) -> hopper.HopperParams:
    over = cfg.params.get("robot", {})
    base = hopper.HopperParams()
    if over:
        base = replace(base, **{k: float(v) for k, v in over.items()})
    return base


def _build_bed(cfg: ExperimentConfig, seed: int, settle: bool = True):
    profile = dem.load_profile(cfg.params.get("world_profile", "desk"))
    world = dem.world_from_profile(profile, seed=seed)
    world.intruder = None
    report = None
    if settle:
        st = cfg.params.get("settle", {})
        world, report = dem.agitate_and_settle(
            world,
            tuple(st.get("speed_range", (0.40, 0.45))),
            st.get("settle_time", 1.0),
            seed=seed + 1,
        )
    from .dem.world import plate_from_profile

    world.intruder = plate_from_profile(profile)
    world.intruder.center = np.array([
        world.domain[0] / 2, world.domain[1] / 2, world.domain[2] * 2.0,
    ])
    return world, profile, report


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def _run_settle(cfg: ExperimentConfig, out: Path) -> dict:
    world, profile, report = _build_bed(cfg, cfg.seed, settle=True)
    _write_csv(out / "cooling.csv", ["t", "mean_speed", "std_speed"],
               zip(report.times, report.mean_speed, report.std_speed))
    return {
        "particles": world.particle_count,
        "final_mean_speed": report.final_mean_speed,
        "settled": report.settled,
        "surface_height_m": dem.surface_height(world),
        "ok": report.settled,
    }


def _run_intrude(cfg: ExperimentConfig, out: Path) -> dict:
    world, profile, _ = _build_bed(cfg, cfg.seed)
    p = cfg.params
    beta = math.radians(p.get("beta_deg", 0.0))
    gamma = math.radians(p.get("gamma_deg", 90.0))
    speed = p.get("speed", 0.03)
    window = intrusion.scaled_fit_window(dem.surface_height(world))
    max_depth = p.get("max_depth", window[1] * 1.08)
    run_ = intrusion.run_intrusion(world, beta, gamma, speed, max_depth)
    _write_csv(out / "trajectory.csv", ["depth_m", "sigma_z", "sigma_x"],
               run_.series)
    az, ax, r2z, r2x = intrusion.fit_stress_gradient(run_, *window)
    return {
        "alpha_z": az, "alpha_x": ax, "r2_z": r2z, "r2_x": r2x,
        "window_m": list(window), "particles": world.particle_count,
        "ok": r2z >= 0.9,
    }


def _run_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    betas = np.radians(p.get("betas_deg", list(np.linspace(-60, 60, 7))))
    gammas = np.radians(p.get("gammas_deg", list(np.linspace(45, 90, 7))))
    sweep_cfg = intrusion.SweepConfig(
        betas=betas, gammas=gammas, speed=p.get("speed", 0.03),
        base_seed=cfg.seed,
    )

    def factory(seed):
        world, _, _ = _build_bed(cfg, seed)
        return world

    grid, defects = intrusion.sweep_grid(sweep_cfg, p.get("trials", 2), factory)
    intrusion.save_grid_csv(grid, out / "grid.csv")
    return {"cells": int(grid.valid_mask().sum()),
            "defects": len(defects), "ok": True}


def _run_fit(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    source = p.get("grid_csv", "builtin:table_grid")
    if str(source) == "builtin:table_grid":
        table = ground.load_coefficient_table()
        betas = np.linspace(-np.pi / 2, np.pi / 2, 13)
        gammas = np.linspace(-np.pi, np.pi, 13)
        bb, gg = np.meshgrid(betas, gammas, indexing="ij")
        az, ax = ground.eval_alpha(table, bb.ravel(), gg.ravel())
        grid = intrusion.AlphaGrid(
            betas=betas, gammas=gammas,
            alpha_z=az.reshape(bb.shape), alpha_x=ax.reshape(bb.shape),
        )
    else:
        grid = intrusion.load_grid_csv(source)
    model = intrusion.fourier_fit(grid, p["order"])
    ground.save_model_json(model, out / "model.json")
    err_z, err_x = intrusion.error_map(grid, model)
    intrusion.save_error_map_csv(grid, err_z, out / "error_map_z.csv")
    intrusion.save_error_map_csv(grid, err_x, out / "error_map_x.csv")
    return {
        "order": p["order"],
        "rms_alpha_z": model.metadata["rms_alpha_z"],
        "rms_alpha_x": model.metadata["rms_alpha_x"],
        "max_abs_error_z": float(np.abs(err_z).max()),
        "ok": True,
    }


def _make_plant(cfg: ExperimentConfig, params: hopper.HopperParams):
    if cfg.plant == "analytic":
        pert = cfg.params.get("k_g_scale", 1.0)
        return control.AnalyticPlant(replace(params, k_g=params.k_g * pert))
    world, profile, _ = _build_bed(cfg, cfg.seed)
    foot_dims = np.array([0.05, 0.05, 0.10])
    side = cfg.params.get("foot_side_cm", 5.0) / 100.0
    foot_dims[0] = foot_dims[1] = side
    world.intruder = dem.PlateBody(
        dimensions=foot_dims,
        density=params.m_f / float(np.prod(foot_dims)),
        dynamic_z=True,
    )
    return control.DemPlant(world, params)


def _run_hop(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    params = _hopper_params(cfg)
    if "k_g" in p:
        params = replace(params, k_g=float(p["k_g"]))
    plan = gait.plan_hop(p["V0"], params, u_bounds=p.get("u_bounds", 200.0))
    gait.save_plan_json(plan, out / "plan.json")
    gains = control.PdGains(**p.get("gains", {}))
    plant = _make_plant(cfg, params)
    plant.reset_for_run(plan, 0, seed=cfg.seed)
    outcome = control.execute_hop(plan, plant, gains, p.get("mode", "ff_plus_fb"))
    _write_csv(out / "run_log.csv", control.LOG_COLUMNS, outcome.log)
    return {
        "V0": p["V0"], "eta_percent": outcome.eta,
        "err_vel": outcome.err_vel, "period": plan.period,
        "failed": outcome.failed, "ok": not outcome.failed,
    }


def _run_multihop(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    params = _hopper_params(cfg)
    plan = gait.plan_hop(p["V0"], params)
    gains = control.PdGains(**p.get("gains", {}))
    plant = _make_plant(cfg, params)
    plant.reset_for_run(plan, 0, seed=cfg.seed)
    outs = control.execute_multi_hop(
        plan, plant, gains, p["n_hops"], p.get("mode", "ff_plus_fb"),
        sync=p.get("sync", "touchdown"),
    )
    _write_csv(out / "hops.csv",
               ["hop", "eta_percent", "err_vel", "duration", "failed"],
               [(o.hop_index, o.eta, o.err_vel, o.duration, o.failed)
                for o in outs])
    log = np.concatenate([o.log for o in outs])
    _write_csv(out / "run_log.csv", control.LOG_COLUMNS, log)
    return {
        "V0": p["V0"], "hops": len(outs),
        "etas_percent": [o.eta for o in outs],
        "failed": any(o.failed for o in outs),
        "ok": not any(o.failed for o in outs),
    }


def _run_impact_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    params = _hopper_params(cfg)
    gains = control.PdGains(**p.get("gains", {}))
    plant = _make_plant(cfg, params)
    report = control.impact_sweep(
        plant, p["velocities"], p.get("trials", 1), gains, params=params,
        modes=tuple(p.get("modes", ("ff_only", "ff_plus_fb"))),
        base_seed=cfg.seed,
    )
    _write_csv(out / "sweep.csv", ["V0", "mode", "trial", "eta_pos", "err_vel"],
               report["rows"])
    _write_csv(
        out / "sweep_stats.csv",
        ["V0", "mode", "eta_mean", "eta_std", "err_vel_mean", "err_vel_std"],
        [(v, m, *stats) for (v, m), stats in report["summary"].items()],
    )
    return {"runs": len(report["rows"]), "ok": True}


def _run_foot_sweep(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    base = _hopper_params(cfg)
    rows = []
    for side in p["sides_cm"]:
        scaled = hopper.scale_for_foot(base, side)
        ratio = scaled.total_mass / scaled.foot_area
        for V0 in p.get("velocities", [-0.2]):
            try:
                plan = gait.plan_hop(V0, scaled, q_b0=p.get("q_b0", 0.25))
                plant = control.AnalyticPlant(scaled)
                plant.reset(plan.initial)
                outcome = control.execute_hop(
                    plan, plant, control.PdGains(**p.get("gains", {})),
                    p.get("mode", "ff_plus_fb"),
                )
                rows.append((side, V0, ratio, True, outcome.eta))
            except gait.GaitInfeasible as exc:
                rows.append((side, V0, ratio, False, float("nan")))
    _write_csv(out / "foot_sweep.csv",
               ["side_cm", "V0", "mass_per_area", "feasible", "eta_percent"],
               rows)
    return {
        "sides": p["sides_cm"],
        "all_feasible": all(r[3] for r in rows),
        "ok": all(r[3] for r in rows),
    }


def _run_speed_compare(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    speeds = p.get("speeds", [0.01, 0.03, 0.05])
    world, profile, _ = _build_bed(cfg, cfg.seed)
    window = intrusion.scaled_fit_window(dem.surface_height(world))
    rows = []
    for speed in speeds:
        run_ = intrusion.run_intrusion(
            world, 0.0, math.pi / 2, speed, window[1] * 1.08
        )
        az, ax, r2z, r2x = intrusion.fit_stress_gradient(run_, *window)
        rows.append((speed, az, ax, r2z, r2x))
    _write_csv(out / "speed_compare.csv",
               ["speed_m_s", "alpha_z", "alpha_x", "r2_z", "r2_x"], rows)
    azs = np.array([r[1] for r in rows])
    spread = float((azs.max() - azs.min()) / azs.mean())
    return {
        "speeds": speeds, "alpha_z": list(azs), "spread_ratio": spread,
        "window_m": list(window), "ok": spread < 0.10,
    }


_RUNNERS = {
    "settle": _run_settle,
    "intrude": _run_intrude,
    "sweep": _run_sweep,
    "fit": _run_fit,
    "hop": _run_hop,
    "multihop": _run_multihop,
    "impact_sweep": _run_impact_sweep,
    "foot_sweep": _run_foot_sweep,
    "speed_compare": _run_speed_compare,
}


def run(config: ExperimentConfig) -> int:
    """Execute one scenario, writing its artifact set under config.out_dir."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")
    t0 = time.time()
    try:
        summary = _RUNNERS[config.scenario](config, out)
    except dem.DemUnstable as exc:
        _write_summary(out, {"scenario": config.scenario, "ok": False,
                             "error": str(exc)})
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary["scenario"] = config.scenario
    summary["seed"] = config.seed
    summary["wall_time_s"] = time.time() - t0
    _write_summary(out, summary)
    return EXIT_OK if summary.get("ok", True) else EXIT_INVARIANT


def report(artifact_dir: str | Path, out_path: str | Path | None = None) -> str:
    """Aggregate run artifacts into a markdown summary (plus CSV passthrough).

    Missing artifacts are enumerated rather than silently skipped.
    """
    root = Path(artifact_dir)
    summaries = sorted(root.glob("**/summary.json"))
    if not summaries:
        raise FileNotFoundError(f"no artifacts found under {root}")
    lines = ["# Run report", ""]
    rows = []
    for s in summaries:
        with open(s, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        rel = s.parent.relative_to(root) if s.parent != root else Path(".")
        lines.append(f"## {rel} ({payload.get('scenario', '?')})")
        for k, v in payload.items():
            if k == "scenario":
                continue
            lines.append(f"- {k}: {v}")
        lines.append("")
        rows.append((str(rel), payload.get("scenario", ""),
                     payload.get("ok", ""), payload.get("wall_time_s", "")))
    text = "\n".join(lines)
    if out_path is not None:
        out_path = Path(out_path)
        out_path.mkdir(parents=True, exist_ok=True)
        with open(out_path / "report.md", "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_csv(out_path / "report.csv",
                   ["run", "scenario", "ok", "wall_time_s"], rows)
    return text


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hopper",
        description="Granular-terrain hopping experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SCENARIOS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=False, help="JSON config path")
        sp.add_argument("--out", default="artifacts", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--verbose", action="store_true")
    rp = sub.add_parser("report")
    rp.add_argument("--artifacts", required=True)
    rp.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    if args.command == "report":
        try:
            text = report(args.artifacts, args.out)
        except FileNotFoundError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_CONFIG
        print(text)
        return EXIT_OK

    payload = {"scenario": args.command}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                payload.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    payload["scenario"] = args.command
    try:
        config = ExperimentConfig.from_dict(
            payload, seed=args.seed, out_dir=args.out
        )
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
