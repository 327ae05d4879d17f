"""Receding-horizon controller: alternating prediction and weight update.

Each tick repeats up to ``alternations`` rounds of

  Stage 1: linearize the prediction, solve the stage-wise QP, take the
           (partial) Newton step;
  Stage 2: (adaptive mode only) accumulate the error products over the
           sub-horizon and refresh the diagonal state weights,

stopping early once the step norm drops below ``conv_tol``. The command is
the first predicted control, clamped to the limits. The prediction is then
shifted one stage for the next tick (drop the first stage, append the last
state integrated one step forward). On a QP failure the controller holds
the previous command and rebuilds the prediction from the reference window
on the next tick.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .adaptation import AdaptConfig, compute_v, update_weights
from .dynamics import (
    QUADROTOR,
    Control,
    ControlLimits,
    QuadrotorModel,
    State,
)
from .trajectories import ReferenceWindow
from .transcription import (
    PredictionTrajectory,
    QpSolveError,
    WeightVector,
    apply_step,
    build_qp,
    solve_qp,
)


def benchmark_weights() -> WeightVector:
    """Generic conservative tuning used as the fixed-weight default.

    Position and attitude are tracked with unit weight, velocity errors are
    damped lightly, and the control weight favors smooth commands. This is
    the profile the adaptive update is benchmarked against.
    """
    q = np.ones(10)
    q[3:6] = 0.3
    return WeightVector(q, np.full(4, 5.0))


@dataclass
class ControllerConfig:
    horizon: int = 19
    dt: float = 0.05
    alpha: float = 1.0
    adapt: AdaptConfig | None = None
    fixed_weights: WeightVector = field(default_factory=benchmark_weights)
    limits: ControlLimits | None = field(default_factory=ControlLimits)
    alternations: int = 2
    conv_tol: float = 1e-4
    qp_tol: float = 1e-6
    qp_max_iter: int = 200
    # run the weight update once per tick, after the final round: the command
    # is then never computed from weights refreshed by a corrupted measurement
    stage2_every_round: bool = False
    model: QuadrotorModel = field(default_factory=lambda: QUADROTOR)

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError(f"horizon must be >= 2, got {self.horizon}")
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.alternations < 1:
            raise ValueError(f"alternations must be >= 1, got {self.alternations}")
        if self.adapt is not None and self.adapt.sub_horizon > self.horizon:
            raise ValueError(
                f"sub_horizon {self.adapt.sub_horizon} exceeds horizon {self.horizon}"
            )
        self.fixed_weights.validate()


@dataclass
class ControllerState:
    """Mutable per-vehicle controller memory between ticks."""

    pred: PredictionTrajectory | None
    weights: WeightVector
    last_command: np.ndarray | None = None


@dataclass
class RoundInfo:
    kkt_residual: float
    step_norm: float


@dataclass
class TickDiagnostics:
    rounds: list[RoundInfo] = field(default_factory=list)
    weights_q: np.ndarray | None = None
    failed: bool = False
    message: str = ""

    @property
    def kkt_residual(self) -> float:
        return self.rounds[-1].kkt_residual if self.rounds else float("nan")


def _pred_from_window(window: ReferenceWindow, horizon: int) -> PredictionTrajectory:
    return PredictionTrajectory(window.xs[: horizon + 1].copy(), window.us[:horizon].copy())


def init_controller(cfg: ControllerConfig, refs: ReferenceWindow) -> ControllerState:
    """Warm-start the prediction from the first reference window."""
    if len(refs) < cfg.horizon + 1:
        raise ValueError(f"window of length {len(refs)} too short for horizon {cfg.horizon}")
    weights = WeightVector(cfg.fixed_weights.q.copy(), cfg.fixed_weights.r.copy())
    return ControllerState(pred=_pred_from_window(refs, cfg.horizon), weights=weights)


def _shift(pred: PredictionTrajectory, dt: float, model: QuadrotorModel) -> PredictionTrajectory:
    tail = model.step(pred.xs[-1], pred.us[-1], dt)
    xs = np.vstack([pred.xs[1:], tail[None, :]])
    us = np.vstack([pred.us[1:], pred.us[-1:]])
    return PredictionTrajectory(xs, us)


def nmpc_tick(
    state: ControllerState,
    x_meas: State | np.ndarray,
    refs: ReferenceWindow,
    cfg: ControllerConfig,
) -> tuple[Control, ControllerState, TickDiagnostics]:
    """One control tick; returns the command, the next state, and diagnostics."""
    if len(refs) < cfg.horizon + 1:
        raise ValueError(f"window of length {len(refs)} too short for horizon {cfg.horizon}")
    pred = state.pred if state.pred is not None else _pred_from_window(refs, cfg.horizon)
    weights = state.weights
    diag = TickDiagnostics()

    try:
        for _ in range(cfg.alternations):
            prob = build_qp(pred, refs, weights, x_meas, cfg.limits, cfg.alpha, cfg.dt, cfg.model)
            sol = solve_qp(prob, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
            pred = apply_step(pred, sol, cfg.alpha, cfg.limits, cfg.model)
            diag.rounds.append(RoundInfo(sol.kkt_residual, sol.step_norm))

            last_round = len(diag.rounds) == cfg.alternations or sol.step_norm < cfg.conv_tol
            if cfg.adapt is not None and (cfg.stage2_every_round or last_round):
                # error products from the post-step prediction residual against the
                # reference, with the pre-step error as the gradient anchor
                ns = cfg.adapt.sub_horizon
                resid = pred.xs[:ns] - refs.xs[:ns]
                v_sum = compute_v(resid, prob.lx[:ns], cfg.alpha).sum(axis=0)
                q_new = np.maximum(update_weights(v_sum, cfg.adapt), 0.0)
                weights = WeightVector(q_new, weights.r)

            if sol.step_norm < cfg.conv_tol:
                break
    except QpSolveError as err:
        diag.failed = True
        diag.message = str(err)
        diag.weights_q = weights.q.copy()
        held = np.asarray(state.last_command if state.last_command is not None else refs.us[0], dtype=float)
        command = cfg.limits.clamp(held) if cfg.limits is not None else held
        # prediction is stale after a failed solve: rebuild from refs next tick
        next_state = ControllerState(pred=None, weights=weights, last_command=command)
        return Control.from_vector(command), next_state, diag

    command = cfg.limits.clamp(pred.us[0]) if cfg.limits is not None else pred.us[0].copy()
    diag.weights_q = weights.q.copy()
    next_state = ControllerState(
        pred=_shift(pred, cfg.dt, cfg.model),
        weights=weights,
        last_command=command,
    )
    return Control.from_vector(command), next_state, diag


def baseline_tick(
    state: ControllerState,
    x_meas: State | np.ndarray,
    refs: ReferenceWindow,
    cfg: ControllerConfig,
) -> tuple[Control, ControllerState, TickDiagnostics]:
    """Fixed-weight tick: identical to :func:`nmpc_tick` with adaptation off."""
    return nmpc_tick(state, x_meas, refs, replace(cfg, adapt=None))
