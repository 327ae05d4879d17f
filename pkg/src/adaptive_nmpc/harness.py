"""Closed-loop simulation, noise protocol, metrics, and experiment grids.

The plant is the nominal model: the controller's command is applied through
the same integrator that the transcription linearizes, so tracking error is
driven by reference/feedforward inconsistency, control saturation, and the
injected measurement noise.

Noise protocol: one trajectory index ``tau`` is drawn uniformly per run;
at that tick the measured position is corrupted as ``p' = p + sigma * nu``
with an isotropic Gaussian draw ``nu`` rescaled to ``|nu| = |p|``.
Velocity and attitude are never corrupted.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .adaptation import AdaptConfig
from .controller import ControllerConfig, baseline_tick, init_controller, nmpc_tick
from .dynamics import State
from .trajectories import ReferenceTrajectory, preset

#: Environment variable capping the number of grid worker processes.
THREADS_ENV = "ADAPTIVE_NMPC_THREADS"


@dataclass
class NoiseConfig:
    sigma: float = 0.0
    runs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")


@dataclass
class SimLog:
    """Per-tick record of one closed-loop run (one row per trajectory point)."""

    ts: np.ndarray  # (L,)
    x_true: np.ndarray  # (L, 10)
    x_meas: np.ndarray  # (L, 10)
    u_applied: np.ndarray  # (L, 4)
    ref_xs: np.ndarray  # (L, 10)
    ref_us: np.ndarray  # (L, 4)
    q_snapshot: np.ndarray  # (L, 10)
    kkt: np.ndarray  # (L,)
    failures: int = 0

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def position_error(self) -> np.ndarray:
        """Per-tick distance between simulated and reference position."""
        return np.linalg.norm(self.x_true[:, 0:3] - self.ref_xs[:, 0:3], axis=1)


@dataclass
class MetricsReport:
    e: float
    tv: float
    e_r: float | None = None


def inject_noise(x: State, sigma: float, rng: np.random.Generator) -> State:
    """Corrupt the position with a Gaussian draw rescaled to the position norm."""
    if sigma == 0.0:
        return x
    nu = rng.standard_normal(3)
    nu /= np.linalg.norm(nu)
    p_norm = float(np.linalg.norm(x.p_WB))
    nu *= p_norm if p_norm > 0.0 else 1.0
    return State(x.p_WB + sigma * nu, x.v_WB, x.q_WB)


def metric_total_error(log: SimLog) -> float:
    """Total position error e = sum_i |p_i - p_ref_i|."""
    if len(log) == 0:
        raise ValueError("empty log")
    return float(log.position_error.sum())


def metric_tv(controls: np.ndarray, length: int | None = None) -> float:
    """Mean absolute tick-to-tick change of thrust and body rates."""
    controls = np.asarray(controls, dtype=float)
    L = length if length is not None else controls.shape[0]
    if L < 2 or controls.shape[0] < 2:
        raise ValueError("need at least 2 control samples")
    diffs = np.abs(np.diff(controls, axis=0))
    return float(diffs.sum() / L)


def run_closed_loop(
    traj: ReferenceTrajectory,
    cfg: ControllerConfig,
    noise: NoiseConfig | None = None,
    seed: int = 0,
    x0: State | None = None,
) -> SimLog:
    """Simulate the controller against the nominal plant over the whole trajectory."""
    L = len(traj)
    model = cfg.model
    tick = baseline_tick if cfg.adapt is None else nmpc_tick

    tau = -1
    sigma = 0.0
    rng = np.random.default_rng(seed)
    if noise is not None:
        sigma = noise.sigma
        tau = int(rng.integers(0, L))

    state = init_controller(cfg, traj.window(0, cfg.horizon + 1))
    x_true = (x0.as_vector() if x0 is not None else traj.xs[0]).copy()

    log = SimLog(
        ts=traj.ts.copy(),
        x_true=np.zeros((L, 10)),
        x_meas=np.zeros((L, 10)),
        u_applied=np.zeros((L, 4)),
        ref_xs=traj.xs.copy(),
        ref_us=traj.us.copy(),
        q_snapshot=np.zeros((L, 10)),
        kkt=np.zeros(L),
    )

    for i in range(L):
        x_meas = x_true
        if i == tau and sigma > 0.0:
            x_meas = inject_noise(State.from_vector(x_true), sigma, rng).as_vector()
        window = traj.window(i, cfg.horizon + 1)
        command, state, diag = tick(state, x_meas, window, cfg)
        u = command.as_vector()

        log.x_true[i] = x_true
        log.x_meas[i] = x_meas
        log.u_applied[i] = u
        log.q_snapshot[i] = diag.weights_q
        log.kkt[i] = diag.kkt_residual
        if diag.failed:
            log.failures += 1

        x_true = model.step(x_true, u, cfg.dt)
    return log


# ---------------------------------------------------------------------------
# Experiment grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    """One grid cell: a fully specified controller/run configuration."""

    trajectory: str
    mode: str  # 'fixed' | 'adaptive'
    lam: float | None = None
    horizon: int = 19
    sub_horizon: int | None = None
    sigma: float = 0.0
    variant: str = "exponential"
    runs: int = 1

    @property
    def valid(self) -> bool:
        return self.mode == "fixed" or self.sub_horizon is None or self.sub_horizon <= self.horizon

    def effective_key(self) -> tuple:
        """Cache key collapsing parameters that do not affect the run."""
        if self.mode == "fixed":
            return (self.trajectory, "fixed", None, self.horizon, None, self.sigma, None, self.runs)
        return (
            self.trajectory,
            self.mode,
            self.lam,
            self.horizon,
            self.sub_horizon,
            self.sigma,
            self.variant,
            self.runs,
        )


@dataclass
class CellResult:
    cell: Cell
    status: str  # 'ok' | 'skipped' | 'failed'
    report: MetricsReport | None = None
    per_run_e: list[float] = field(default_factory=list)
    message: str = ""


@dataclass(frozen=True)
class GridSpec:
    """Cartesian grid over trajectories, modes, and sweep axes."""

    trajectories: tuple[str, ...]
    modes: tuple[str, ...] = ("fixed", "adaptive")
    lambdas: tuple[float, ...] = (1.0,)
    horizons: tuple[int, ...] = (19,)
    sub_horizons: tuple[int | None, ...] = (8,)
    sigmas: tuple[float, ...] = (0.0,)
    variant: str = "exponential"
    runs: int = 1

    def cells(self) -> list[Cell]:
        out = []
        for traj, mode, lam, nh, ns, sig in product(
            self.trajectories, self.modes, self.lambdas, self.horizons, self.sub_horizons, self.sigmas
        ):
            if mode == "fixed":
                lam, ns = None, None
            out.append(
                Cell(traj, mode, lam, nh, ns, sig, self.variant, self.runs)
            )
        # drop exact duplicates created by collapsing fixed-mode axes while
        # keeping one fixed cell per grid position requested
        return out


def cell_config(cell: Cell, base: ControllerConfig) -> ControllerConfig:
    adapt = None
    if cell.mode == "adaptive":
        adapt = AdaptConfig(
            lam=cell.lam if cell.lam is not None else 1.0,
            sub_horizon=cell.sub_horizon if cell.sub_horizon is not None else 8,
            variant=cell.variant,
        )
    return replace(base, horizon=cell.horizon, adapt=adapt)


def run_cell(cell: Cell, base: ControllerConfig, seed: int = 0) -> CellResult:
    """Run one grid cell; averages metrics over ``cell.runs`` derived seeds."""
    if not cell.valid:
        return CellResult(cell, "skipped", message="sub_horizon exceeds horizon")
    try:
        cfg = cell_config(cell, base)
        traj = preset(cell.trajectory, dt=cfg.dt)
        es, tvs = [], []
        for k in range(cell.runs):
            noise = NoiseConfig(sigma=cell.sigma, runs=1, seed=seed + k) if cell.sigma > 0.0 else None
            log = run_closed_loop(traj, cfg, noise=noise, seed=seed + k)
            es.append(metric_total_error(log))
            tvs.append(metric_tv(log.u_applied))
        e_mean = float(np.mean(es))
        report = MetricsReport(
            e=e_mean,
            tv=float(np.mean(tvs)),
            e_r=e_mean if cell.runs > 1 else None,
        )
        return CellResult(cell, "ok", report=report, per_run_e=es)
    except Exception as err:  # noqa: BLE001 - cell failures must not kill the grid
        return CellResult(cell, "failed", message=f"{type(err).__name__}: {err}")


def _worker(args: tuple) -> tuple[tuple, CellResult]:
    key, cell, base, seed = args
    return key, run_cell(cell, base, seed)


def grid_workers(requested: int | None = None) -> int:
    cap = os.environ.get(THREADS_ENV)
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_experiment_grid(
    grid: GridSpec,
    base: ControllerConfig,
    seed: int = 0,
    max_workers: int | None = None,
) -> list[CellResult]:
    """Evaluate every grid cell; identical effective configurations run once."""
    cells = grid.cells()
    unique: dict[tuple, Cell] = {}
    for cell in cells:
        unique.setdefault(cell.effective_key(), cell)

    workers = grid_workers(max_workers)
    results: dict[tuple, CellResult] = {}
    jobs = [(key, cell, base, seed) for key, cell in sorted(unique.items())]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, res in pool.map(_worker, jobs):
                results[key] = res
    else:
        for job in jobs:
            key, res = _worker(job)
            results[key] = res

    out = []
    for cell in cells:
        res = results[cell.effective_key()]
        out.append(CellResult(cell, res.status, res.report, res.per_run_e, res.message))
    return out
