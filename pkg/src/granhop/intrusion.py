"""Plate-intrusion experiments on DEM beds and stress-surface fitting.

A rigid plate is driven through a settled bed at fixed attitude and
direction; the per-step reaction forces divided by plate area give the
resistive stresses, whose depth slope over a window away from the surface
and the container bottom is the stress gradient alpha(beta, gamma).  Grids
of trial-averaged |alpha| values are projected onto the truncated Fourier
basis by ordinary least squares.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dem.world import DemWorld, PlateBody, run, surface_height
from .ground import FourierModel, FourierTerm, PlatePose, eval_alpha

__all__ = [
    "IntrusionRun",
    "AlphaGrid",
    "SweepConfig",
    "WindowError",
    "RankDeficientError",
    "run_intrusion",
    "fit_stress_gradient",
    "sweep_grid",
    "fourier_fit",
    "error_map",
    "normalized_error",
    "scaled_fit_window",
    "save_grid_csv",
    "load_grid_csv",
    "save_error_map_csv",
]


class WindowError(ValueError):
    """The recorded depth series does not cover the requested fit window."""


class RankDeficientError(ValueError):
    """The sampled grid cannot support the requested Fourier order."""


@dataclass
class IntrusionRun:
    beta: float
    gamma: float
    speed: float
    series: np.ndarray  # rows (depth_m, sigma_z, sigma_x); depth positive down
    trial_seed: int

    def __post_init__(self) -> None:
        if not self.speed > 0:
            raise ValueError("speed must be positive")
        d = self.series[:, 0]
        if len(d) > 1 and not np.all(np.diff(d) > -1e-12):
            raise ValueError("depth series must be monotone increasing")


def scaled_fit_window(fill_depth: float) -> tuple[float, float]:
    """Fit window for a bed of the given fill depth.

    The reference window is 2 to 7.5 cm; beds shallower than 10 cm scale it
    to [0.2, 0.6] of the fill depth to keep clear of surface and bottom
    effects.
    """
    if fill_depth < 0.10:
        return 0.2 * fill_depth, 0.6 * fill_depth
    return 0.02, 0.075


def run_intrusion(
    world_template: DemWorld,
    beta: float,
    gamma: float,
    speed: float,
    max_depth: float,
    record_every: int | None = None,
    start_gap: float = 0.002,
) -> IntrusionRun:
    """Drive the plate at constant velocity through a copy of the bed.

    The plate keeps attitude ``beta`` and moves along direction ``gamma``
    (pi/2 is straight down); forces are recorded as window-averaged
    stresses versus plate-center depth below the undisturbed surface.
    """
    if not speed > 0:
        raise ValueError("intrusion speed must be positive")
    if math.sin(gamma) <= 0:
        raise ValueError("run_intrusion drives downward; need sin(gamma) > 0")
    world = world_template.copy()
    if world.intruder is None:
        raise ValueError("world template carries no plate intruder")
    plate = world.intruder
    plate.pose = PlatePose(beta=beta, gamma=gamma)
    z_surf = surface_height(world)

    direction = np.array([math.cos(gamma), 0.0, -math.sin(gamma)])
    plate.velocity = speed * direction

    # start with the plate's lowest corner just above the surface, centered
    # so the horizontal travel stays inside the box; stop once the center
    # depth passes max_depth
    plate.center = np.array([0.0, world.domain[1] / 2.0, 0.0])
    drop = plate.center[2] - plate.lowest_point_z()  # center above lowest corner
    travel_time = (max_depth + start_gap + drop) / (speed * math.sin(gamma))
    travel_x = speed * math.cos(gamma) * travel_time
    plate.center[0] = 0.5 * (world.domain[0] - travel_x)
    plate.center[2] = z_surf + start_gap + drop

    n_steps = int(round(travel_time / world.dt))
    if record_every is None:
        record_every = max(1, int(round(5e-4 / world.dt)))  # ~2 kHz samples
    records = run(world, n_steps, record_every=record_every)

    depth = z_surf - records[:, 3]  # plate-center depth, positive below surface
    area = plate.area_cm2
    sigma_z = records[:, 6] / area  # N/cm^2
    sigma_x = records[:, 4] / area
    series = np.stack([depth, sigma_z, sigma_x], axis=1)
    series = series[series[:, 0] <= max_depth + 1e-9]
    return IntrusionRun(
        beta=beta, gamma=gamma, speed=speed, series=series,
        trial_seed=world.seed,
    )


def fit_stress_gradient(
    run_: IntrusionRun,
    z_lo: float = 0.02,
    z_hi: float = 0.075,
) -> tuple[float, float, float, float]:
    """Least-squares slope of stress versus depth (in cm) over the window.

    Returns (alpha_z, alpha_x, r2_z, r2_x) with the intercepts left free.
    """
    d = run_.series[:, 0]
    if d.min() > z_lo + 1e-9 or d.max() < z_hi - 1e-9:
        raise WindowError(
            f"series spans [{d.min():.4f}, {d.max():.4f}] m, "
            f"not the window [{z_lo}, {z_hi}]"
        )
    mask = (d >= z_lo) & (d <= z_hi)
    if mask.sum() < 10:
        raise WindowError(f"only {mask.sum()} samples inside the fit window")
    x = d[mask] * 100.0  # cm
    A = np.stack([x, np.ones_like(x)], axis=1)

    out = []
    for col in (1, 2):
        y = run_.series[mask, col]
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        yhat = A @ coef
        ss_res = float(((y - yhat) ** 2).sum())
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
        out.append((float(coef[0]), r2))
    (alpha_z, r2_z), (alpha_x, r2_x) = out
    return alpha_z, alpha_x, r2_z, r2_x


@dataclass
class AlphaGrid:
    betas: np.ndarray
    gammas: np.ndarray
    alpha_z: np.ndarray  # shape (len(betas), len(gammas)), |alpha|
    alpha_x: np.ndarray
    trials: int = 1
    defects: list = field(default_factory=list)

    def __post_init__(self) -> None:
        shape = (len(self.betas), len(self.gammas))
        if self.alpha_z.shape != shape or self.alpha_x.shape != shape:
            raise ValueError("grid matrices must match the axis lengths")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.alpha_z) & np.isfinite(self.alpha_x)


@dataclass
class SweepConfig:
    betas: np.ndarray
    gammas: np.ndarray
    speed: float = 0.03
    max_depth: float | None = None  # default: past the scaled window top
    base_seed: int = 0
    settle: dict = field(default_factory=lambda: {
        "speed_range": (0.40, 0.45), "settle_time": 1.0,
    })


def sweep_grid(
    cfg: SweepConfig,
    trials: int,
    world_factory,
    fit_window: tuple[float, float] | None = None,
) -> tuple[AlphaGrid, list]:
    """Run the (beta, gamma) grid with a fresh settled bed per trial.

    ``world_factory(seed)`` must return a settled world with a plate.
    Signed slopes are averaged over trials first, then absolute values are
    taken.  Cell failures are collected as defects; the grid is returned as
    long as at least 90 percent of the cells produced a value, with failed
    cells left NaN (the Fourier fit masks them).
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    nb, ng = len(cfg.betas), len(cfg.gammas)
    acc_z = np.zeros((nb, ng))
    acc_x = np.zeros((nb, ng))
    count = np.zeros((nb, ng), dtype=int)
    defects = []
    runs = []

    for trial in range(trials):
        world = world_factory(cfg.base_seed + trial)
        window = fit_window
        if window is None:
            fill = surface_height(world)
            window = scaled_fit_window(fill)
        max_depth = cfg.max_depth or window[1] * 1.08
        for i, beta in enumerate(cfg.betas):
            for j, gamma in enumerate(cfg.gammas):
                try:
                    r = run_intrusion(world, beta, gamma, cfg.speed, max_depth)
                    az, ax, r2z, r2x = fit_stress_gradient(r, *window)
                except Exception as exc:
                    defects.append({"beta": beta, "gamma": gamma,
                                    "trial": trial, "error": str(exc)})
                    continue
                acc_z[i, j] += az
                acc_x[i, j] += ax
                count[i, j] += 1
                runs.append((beta, gamma, trial, az, ax, r2z, r2x))

    with np.errstate(invalid="ignore"):
        mean_z = np.where(count > 0, acc_z / np.maximum(count, 1), np.nan)
        mean_x = np.where(count > 0, acc_x / np.maximum(count, 1), np.nan)
    n_bad = int((count == 0).sum())
    if n_bad > 0.1 * nb * ng:
        raise RuntimeError(
            f"{n_bad}/{nb * ng} grid cells failed; defects: {defects[:5]}"
        )
    grid = AlphaGrid(
        betas=np.asarray(cfg.betas, dtype=float),
        gammas=np.asarray(cfg.gammas, dtype=float),
        alpha_z=np.abs(mean_z),
        alpha_x=np.abs(mean_x),
        trials=trials,
        defects=defects,
    )
    grid.run_rows = runs
    return grid, defects


# ---------------------------------------------------------------------------
# Fourier surface fitting
# ---------------------------------------------------------------------------

def _unique_modes(order: int) -> list[tuple[int, int]]:
    """One representative per conjugate pair: (0,0), (0,n>0), (m>0, any n)."""
    modes = [(0, 0)]
    modes += [(0, n) for n in range(1, order + 1)]
    for m in range(1, order + 1):
        for n in range(-order, order + 1):
            modes.append((m, n))
    return modes


def _design(betas: np.ndarray, gammas: np.ndarray, order: int):
    """Least-squares design over the flattened grid for the unique basis."""
    bb, gg = np.meshgrid(betas, gammas, indexing="ij")
    b = bb.ravel()
    g = gg.ravel()
    modes = _unique_modes(order)
    cols = []
    names = []
    for (m, n) in modes:
        arg = 2 * m * b + n * g
        cols.append(np.cos(arg))
        names.append(("cos", m, n))
        if (m, n) != (0, 0):
            cols.append(np.sin(arg))
            names.append(("sin", m, n))
    return np.stack(cols, axis=1), names


def fourier_fit(grid: AlphaGrid, order: int) -> FourierModel:
    """Project the grid onto the truncated basis by ordinary least squares.

    The result is expanded into the conjugate-paired table layout: each
    fitted mode is split evenly between its (m, n) and (-m, -n) rows with
    the sine halves negated, which reproduces the published table structure
    and keeps evaluation real.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    if len(set(np.round(np.diff(grid.betas), 12))) > 1 or (
        len(set(np.round(np.diff(grid.gammas), 12))) > 1
    ):
        raise ValueError("grid axes must be uniformly spaced")
    A, names = _design(grid.betas, grid.gammas, order)
    mask = grid.valid_mask().ravel()
    A_fit = A[mask]
    if np.linalg.matrix_rank(A_fit) < A.shape[1]:
        raise RankDeficientError(
            f"grid of {mask.sum()} points cannot resolve order {order} "
            f"({A.shape[1]} coefficients)"
        )
    z = grid.alpha_z.ravel()[mask]
    x = grid.alpha_x.ravel()[mask]
    cz, res_z, *_ = np.linalg.lstsq(A_fit, z, rcond=None)
    cx, res_x, *_ = np.linalg.lstsq(A_fit, x, rcond=None)

    coef = {}
    for k, (kind, m, n) in enumerate(names):
        coef.setdefault((m, n), {})[kind] = (cz[k], cx[k])
    terms = []
    for (m, n), parts in coef.items():
        Az, Ax = parts["cos"]
        Bz, Bx = parts.get("sin", (0.0, 0.0))
        if (m, n) == (0, 0):
            terms.append(FourierTerm(0, 0, float(Az), 0.0, float(Ax), 0.0))
        else:
            terms.append(FourierTerm(m, n, Az / 2, Bz / 2, Ax / 2, Bx / 2))
            terms.append(FourierTerm(-m, -n, Az / 2, -Bz / 2, Ax / 2, -Bx / 2))

    fit_z = A_fit @ cz
    fit_x = A_fit @ cx
    meta = {
        "source": "least-squares fit of a sampled stress-gradient grid",
        "rms_alpha_z": float(np.sqrt(((z - fit_z) ** 2).mean())),
        "rms_alpha_x": float(np.sqrt(((x - fit_x) ** 2).mean())),
        "mean_abs_residual_z": float(np.abs(z - fit_z).mean()),
        "mean_abs_residual_x": float(np.abs(x - fit_x).mean()),
        "grid_points": int(mask.sum()),
    }
    return FourierModel(order=order, terms=terms, metadata=meta)


def error_map(grid: AlphaGrid, model: FourierModel):
    """Pointwise raw-minus-fitted differences over the grid."""
    bb, gg = np.meshgrid(grid.betas, grid.gammas, indexing="ij")
    fit_z, fit_x = eval_alpha(model, bb.ravel(), gg.ravel())
    err_z = grid.alpha_z - fit_z.reshape(bb.shape)
    err_x = grid.alpha_x - fit_x.reshape(bb.shape)
    return err_z, err_x


def normalized_error(alpha_dem: float, alpha_exp: float, exp_mean: float) -> float:
    """(alpha_dem - alpha_exp) / mean(alpha_exp), the dimensionless mismatch."""
    if exp_mean == 0:
        raise ZeroDivisionError("reference mean must be nonzero")
    return (alpha_dem - alpha_exp) / exp_mean


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def save_grid_csv(grid: AlphaGrid, path: str | Path) -> None:
    """Per-run rows: beta_rad,gamma_rad,trial,alpha_z,alpha_x,r2_z,r2_x."""
    rows = getattr(grid, "run_rows", None)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["beta_rad", "gamma_rad", "trial", "alpha_z", "alpha_x",
                    "r2_z", "r2_x"])
        if rows is not None:
            for r in rows:
                w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])
        else:
            for i, b in enumerate(grid.betas):
                for j, g in enumerate(grid.gammas):
                    w.writerow([f"{b:.10g}", f"{g:.10g}", 0,
                                f"{grid.alpha_z[i, j]:.10g}",
                                f"{grid.alpha_x[i, j]:.10g}", "", ""])


def load_grid_csv(path: str | Path) -> AlphaGrid:
    """Rebuild a trial-averaged grid from the per-run CSV."""
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append((float(rec["beta_rad"]), float(rec["gamma_rad"]),
                         int(rec["trial"] or 0), float(rec["alpha_z"]),
                         float(rec["alpha_x"])))
    betas = np.array(sorted({r[0] for r in rows}))
    gammas = np.array(sorted({r[1] for r in rows}))
    trials = max(r[2] for r in rows) + 1
    acc_z = np.zeros((len(betas), len(gammas)))
    acc_x = np.zeros_like(acc_z)
    cnt = np.zeros_like(acc_z, dtype=int)
    bi = {b: i for i, b in enumerate(betas)}
    gi = {g: j for j, g in enumerate(gammas)}
    for b, g, _, az, ax in rows:
        i, j = bi[b], gi[g]
        acc_z[i, j] += az
        acc_x[i, j] += ax
        cnt[i, j] += 1
    with np.errstate(invalid="ignore"):
        mz = np.where(cnt > 0, acc_z / np.maximum(cnt, 1), np.nan)
        mx = np.where(cnt > 0, acc_x / np.maximum(cnt, 1), np.nan)
    return AlphaGrid(betas=betas, gammas=gammas, alpha_z=np.abs(mz),
                     alpha_x=np.abs(mx), trials=trials)


def save_error_map_csv(grid: AlphaGrid, err: np.ndarray, path: str | Path) -> None:
    """Matrix CSV with gamma values as the header row and beta as column 0."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["beta_rad\\gamma_rad"] + [f"{g:.10g}" for g in grid.gammas])
        for i, b in enumerate(grid.betas):
            w.writerow([f"{b:.10g}"] + [f"{v:.10g}" for v in err[i]])
