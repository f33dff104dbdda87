"""Simulation studies and policy-class characterization.

A study cell fixes (setting, n, w, estimator). Each run draws a fresh
dataset, searches the threshold class on ``[0, 1]^2`` by expected
improvement and scores the chosen policy against closed-form truth. When
``characterize`` is on, a fresh GP is fit to each run's evaluations and
compared with the true value surface on a 100 x 100 grid.
"""
from __future__ import annotations

import csv
import math
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import serialize
from .bayesopt import Budget, GpConfig, OptimizationError, optimize_policy
from .dgp import DgpSpec, generate_dataset, oracle_grid, oracle_values, true_optimum
from .errors import EstimationError, NumericalError
from .estimators import ADDITIVE_RECIPE, fmt, make_evaluator
from .gp import TuneConfig, gp_fit, gp_predict_many, tune_hyperparameters
from .policy import ParamBox, enumerate_grid

# Baseline intercept used when reproducing the published tables; see README.
TABLE_GAMMA0 = -0.5
LEVEL_WIDTH = 0.05
GRID_RESOLUTION = 100


# ---------------------------------------------------------------------------
# characterization


@dataclass
class SurfaceGrid:
    points: np.ndarray
    means: np.ndarray
    levels: np.ndarray
    box: ParamBox
    resolution: tuple
    truth: Optional[np.ndarray] = None
    l1: Optional[float] = None
    l2: Optional[float] = None
    records: Optional[np.ndarray] = None  # (theta..., value, std_dev) rows
    best_theta: Optional[tuple] = None

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def norms(self) -> dict:
        return {"l1": self.l1, "l2": self.l2}


def level_labels(values, width: float = LEVEL_WIDTH) -> np.ndarray:
    """Index of the ``width``-wide bin (anchored at 0) containing each value."""
    return np.floor(np.asarray(values, dtype=float) / width + 1e-12).astype(int)


def surface_norms(means, truth) -> tuple[float, float]:
    diff = np.asarray(means, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.mean(np.abs(diff))), float(np.sqrt(np.mean(diff**2)))


def characterize_policy_class(
    thetas,
    values,
    box: ParamBox,
    resolution=GRID_RESOLUTION,
    tune: TuneConfig = TuneConfig(),
    truth: Optional[Callable] = None,
    std_devs=None,
    seed=None,
) -> SurfaceGrid:
    """Fit a fresh GP to evaluated policies and map its mean over a grid.

    ``values`` may be one value per theta or a 2-D array of saved value
    draws (one row per theta), in which case row means are fit. ``truth``,
    when given, maps an ``(m, d)`` array of grid points to true values.
    """
    x = np.asarray(thetas, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.ndim == 2:
        std_devs = v.std(axis=1, ddof=1) if std_devs is None else std_devs
        v = v.mean(axis=1)
    if x.shape[0] < 10:
        raise ValueError("need at least 10 evaluated policies")
    kernel = tune_hyperparameters(x, v, None, tune, seed=seed)
    model = gp_fit(kernel, x, v, center=tune.center)
    grid = enumerate_grid(box, resolution)
    means, _ = gp_predict_many(model, grid)
    sd = np.zeros(len(v)) if std_devs is None else np.asarray(std_devs, dtype=float)
    res = tuple(resolution) if np.ndim(resolution) else (int(resolution),) * box.dim
    out = SurfaceGrid(grid, means, level_labels(means), box, res,
                      records=np.column_stack([x, v, sd]), best_theta=tuple(x[int(np.argmax(v))]))
    if truth is not None:
        out.truth = np.asarray(truth(grid), dtype=float)
        out.l1, out.l2 = surface_norms(means, out.truth)
    return out


def export_grid(grid: SurfaceGrid, path) -> None:
    """CSV of grid rows plus a ``.json`` sidecar holding norms and layout."""
    names = list(grid.box.names)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "surrogate_mean", *(["truth"] if grid.truth is not None else []), "level"])
        for i in range(len(grid.means)):
            row = [*(fmt(t) for t in grid.points[i]), fmt(grid.means[i])]
            if grid.truth is not None:
                row.append(fmt(grid.truth[i]))
            w.writerow(row + [int(grid.levels[i])])
    sidecar = {
        "l1": grid.l1,
        "l2": grid.l2,
        "resolution": list(grid.resolution),
        "box": grid.box.to_dict(),
        "level_width": LEVEL_WIDTH,
        "best_theta": None if grid.best_theta is None else list(grid.best_theta),
    }
    serialize.write_json(_sidecar_path(path), sidecar)


def _sidecar_path(path) -> str:
    path = str(path)
    return (path[:-4] if path.endswith(".csv") else path) + ".json"


def read_grid(path) -> SurfaceGrid:
    import json

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    arr = np.array(body, dtype=float)
    with open(_sidecar_path(path)) as fh:
        meta = json.load(fh)
    box = ParamBox(meta["box"]["lower"], meta["box"]["upper"], meta["box"]["names"])
    d = box.dim
    has_truth = "truth" in header
    return SurfaceGrid(
        arr[:, :d], arr[:, d], arr[:, -1].astype(int), box, tuple(meta["resolution"]),
        truth=arr[:, d + 1] if has_truth else None, l1=meta["l1"], l2=meta["l2"],
        best_theta=None if meta["best_theta"] is None else tuple(meta["best_theta"]),
    )


# viridis anchors, interpolated linearly
_PALETTE = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [109, 205, 89], [180, 222, 44], [253, 231, 37],
], dtype=float)

SVG_SIZE = 480.0
SVG_MARGIN = 40.0


def _color(t: float) -> str:
    t = min(max(t, 0.0), 1.0) * (len(_PALETTE) - 1)
    i = min(int(t), len(_PALETTE) - 2)
    c = _PALETTE[i] + (t - i) * (_PALETTE[i + 1] - _PALETTE[i])
    return "#{:02x}{:02x}{:02x}".format(*(int(round(v)) for v in c))


def viewport_map(box: ParamBox, size: float = SVG_SIZE, margin: float = SVG_MARGIN):
    """Affine map from parameter space to SVG pixels (y axis pointing up)."""
    span = size - 2 * margin
    lo, hi = box.lo, box.hi

    def to_px(theta):
        t = (np.asarray(theta, dtype=float) - lo) / (hi - lo)
        return margin + t[..., 0] * span, size - margin - t[..., 1] * span

    return to_px


def _star(cx: float, cy: float, r: float) -> str:
    pts = []
    for k in range(10):
        rad = r if k % 2 == 0 else 0.4 * r
        ang = -math.pi / 2 + k * math.pi / 5
        pts.append(f"{cx + rad * math.cos(ang):.3f},{cy + rad * math.sin(ang):.3f}")
    return " ".join(pts)


def render_contour_svg(grid: SurfaceGrid, path=None, show_points: bool = True) -> str:
    """Level-set map as SVG: one filled polygon per grid cell.

    Evaluated policies are drawn with radius proportional to the precision
    of their estimate, and a star marks the best evaluated policy.
    """
    if grid.dim != 2:
        raise ValueError("contour rendering needs a 2-dimensional grid")
    nx, ny = grid.resolution
    to_px = viewport_map(grid.box)
    hx = 0.5 * (grid.box.hi[0] - grid.box.lo[0]) / (nx - 1)
    hy = 0.5 * (grid.box.hi[1] - grid.box.lo[1]) / (ny - 1)
    lv = grid.levels
    lmin, lmax = int(lv.min()), int(lv.max())

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=f"{SVG_SIZE:g}",
                     height=f"{SVG_SIZE:g}", viewBox=f"0 0 {SVG_SIZE:g} {SVG_SIZE:g}")
    cells = ET.SubElement(svg, "g", id="levels")
    for (t1, t2), level in zip(grid.points, lv):
        corners = grid.box.clip(np.array([[t1 - hx, t2 - hy], [t1 + hx, t2 - hy], [t1 + hx, t2 + hy], [t1 - hx, t2 + hy]]))
        px, py = to_px(corners)
        frac = 0.5 if lmax == lmin else (level - lmin) / (lmax - lmin)
        ET.SubElement(cells, "polygon", points=" ".join(f"{a:.3f},{b:.3f}" for a, b in zip(px, py)),
                      fill=_color(frac), **{"data-level": str(int(level))})
    if show_points and grid.records is not None and len(grid.records):
        pts = ET.SubElement(svg, "g", id="evaluations")
        sd = grid.records[:, -1]
        prec = np.where(sd > 0, 1.0 / np.maximum(sd, 1e-12) ** 2, np.nan)
        rel = prec / np.nanmax(prec) if np.any(np.isfinite(prec)) else np.ones_like(sd)
        for row, r in zip(grid.records, np.nan_to_num(rel, nan=1.0)):
            cx, cy = to_px(row[:2])
            ET.SubElement(pts, "circle", cx=f"{cx:.3f}", cy=f"{cy:.3f}", r=f"{1.5 + 4.5 * r:.3f}",
                          fill="none", stroke="black", **{"stroke-width": "0.8"})
    if grid.best_theta is not None:
        cx, cy = to_px(np.asarray(grid.best_theta))
        ET.SubElement(svg, "polygon", id="best", points=_star(float(cx), float(cy), 9.0),
                      fill="white", stroke="black", **{"data-cx": f"{cx:.6f}", "data-cy": f"{cy:.6f}"})
    text = ET.tostring(svg, encoding="unicode")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


# ---------------------------------------------------------------------------
# simulation study


@dataclass(frozen=True)
class StudyCell:
    setting: int
    n: int
    w: float
    estimator: str


@dataclass
class RunSummary:
    """Aggregate of one study cell.

    ``mse`` is the mean over runs of (estimated value at the chosen policy
    minus the true optimal value) squared; ``regret_mse`` instead uses the
    true value of the chosen policy.
    """

    setting: int
    n: int
    w: float
    estimator: str
    runs: int
    mse: float
    mc_error: float
    regret_mse: float
    regret_mc_error: float
    optimal_value: float
    best_thetas: list = field(default_factory=list)
    best_values: list = field(default_factory=list)
    oracle_at_best: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    excluded: int = 0
    errors: list = field(default_factory=list)

    @property
    def mean_l1(self) -> Optional[float]:
        return float(np.mean(self.l1)) if self.l1 else None

    @property
    def mean_l2(self) -> Optional[float]:
        return float(np.mean(self.l2)) if self.l2 else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["best_thetas"] = [list(t) for t in self.best_thetas]
        d["mean_l1"], d["mean_l2"] = self.mean_l1, self.mean_l2
        return d

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "beta1", "beta2", "estimated_value", "true_value", "l1", "l2"])
            for i, (t, v, o) in enumerate(zip(self.best_thetas, self.best_values, self.oracle_at_best)):
                l1 = fmt(self.l1[i]) if self.l1 else ""
                l2 = fmt(self.l2[i]) if self.l2 else ""
                w.writerow([i, fmt(t[0]), fmt(t[1]), fmt(v), fmt(o), l1, l2])


@dataclass(frozen=True)
class _RunTask:
    spec: DgpSpec
    estimator: str
    budget: Budget
    gp_config: GpConfig
    seed: tuple
    characterize: bool
    recipe: tuple


def _one_run(task: _RunTask):
    data_ss, opt_ss, char_ss = np.random.SeedSequence(task.seed).spawn(3)
    box = ParamBox.unit(2, ("beta1", "beta2"))
    try:
        data = generate_dataset(task.spec, np.random.default_rng(data_ss))
        evaluator = make_evaluator(data, task.estimator, task.recipe)
        trace = optimize_policy(evaluator, box, task.budget, task.gp_config, seed=opt_ss)
        out = {"theta": trace.best_theta, "value": trace.best_value}
        out["oracle"] = float(oracle_values(task.spec, *trace.best_theta))
        if task.characterize:
            grid = characterize_policy_class(
                trace.thetas(), trace.values(), box, GRID_RESOLUTION, task.gp_config.tune,
                truth=lambda g: oracle_grid(task.spec, g), seed=char_ss,
            )
            out["l1"], out["l2"] = grid.l1, grid.l2
        return out
    except (OptimizationError, EstimationError, NumericalError) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def run_cell(
    cell: StudyCell,
    runs: int,
    budget: Budget = Budget(),
    gp_config: GpConfig = GpConfig(),
    seed: int = 0,
    gamma0: float = TABLE_GAMMA0,
    gamma1: float = 1.0,
    characterize: bool = False,
    recipe: Sequence[str] = ADDITIVE_RECIPE,
    setting1_corrected: bool = False,
    workers: int = 1,
) -> RunSummary:
    """One study cell; run ``r`` is seeded by ``(seed, setting, n, w, r)`` alone."""
    if runs < 2:
        raise ValueError("runs must be at least 2")
    spec = DgpSpec(cell.setting, cell.w, gamma0, gamma1, cell.n, setting1_corrected)
    w_key = int(round(cell.w * 1000))
    tasks = [
        _RunTask(spec, cell.estimator, budget, gp_config, (seed, cell.setting, cell.n, w_key, r),
                 characterize, tuple(recipe))
        for r in range(runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one_run, tasks))
    else:
        results = [_one_run(t) for t in tasks]

    opt = true_optimum(spec).value
    ok = [r for r in results if "error" not in r]
    est_err = np.array([(r["value"] - opt) ** 2 for r in ok])
    reg_err = np.array([(r["oracle"] - opt) ** 2 for r in ok])

    def mean_se(a):
        if a.size == 0:
            return math.nan, math.nan
        return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0

    mse, mc = mean_se(est_err)
    rmse, rmc = mean_se(reg_err)
    return RunSummary(
        cell.setting, cell.n, cell.w, cell.estimator, len(ok), mse, mc, rmse, rmc, opt,
        best_thetas=[tuple(r["theta"]) for r in ok],
        best_values=[r["value"] for r in ok],
        oracle_at_best=[r["oracle"] for r in ok],
        l1=[r["l1"] for r in ok] if characterize else [],
        l2=[r["l2"] for r in ok] if characterize else [],
        excluded=len(results) - len(ok),
        errors=[r["error"] for r in results if "error" in r],
    )


def run_simulation_study(
    cells: Sequence[StudyCell],
    runs: int,
    budget: Budget = Budget(),
    seed: int = 0,
    **kwargs,
) -> list:
    """Run every cell; extra keyword arguments go to :func:`run_cell`."""
    return [run_cell(c, runs, budget, seed=seed, **kwargs) for c in cells]
