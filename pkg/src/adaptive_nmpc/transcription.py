"""Multiple-shooting transcription and structured QP solver.

One prediction step solves, for fixed diagonal weights,

    min   sum_k (dz_k + alpha*l_k)^T diag(q, r) dz_k   +  terminal state term
    s.t.  dx_1     = x_meas - x_pr_1
          dx_{k+1} = defect_k + A_k dx_k + B_k du_k
          u_min <= u_pr_k + du_k <= u_max

with ``dz_k = [dx_k; du_k]`` and ``l_k`` the reference error of the current
prediction. The equality-constrained core is solved by a backward Riccati
recursion with affine terms; the control boxes are handled by an outer
active-set loop that clamps components and checks multiplier signs. The
success certificate is the KKT residual of the weight-normalized problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import (
    CONTROL_DIM,
    QUADROTOR,
    STATE_DIM,
    ControlLimits,
    LinearizedStage,
    QuadrotorModel,
    State,
)
from .trajectories import ReferenceWindow

#: Floor applied to state weights so the QP Hessian stays positive definite
#: even when adaptation returns zeros.
Q_MIN = 1e-6


class QpSolveError(RuntimeError):
    """QP solve failed; carries the last KKT residual for diagnostics."""

    def __init__(self, message: str, kkt_residual: float = float("nan")):
        super().__init__(message)
        self.kkt_residual = kkt_residual


@dataclass
class WeightVector:
    """Diagonal state and control weights (q >= 0, r > 0)."""

    q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(STATE_DIM)
        self.r = np.asarray(self.r, dtype=float).reshape(CONTROL_DIM)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.q)) or not np.all(np.isfinite(self.r)):
            raise ValueError("weights must be finite")
        if np.any(self.q < 0.0):
            raise ValueError(f"state weights must be non-negative, got {self.q}")
        if np.any(self.r <= 0.0):
            raise ValueError(f"control weights must be positive, got {self.r}")


def default_weights() -> WeightVector:
    return WeightVector(np.ones(STATE_DIM), np.ones(CONTROL_DIM))


@dataclass
class PredictionTrajectory:
    """Current prediction: N+1 states and N controls as stacked rows."""

    xs: np.ndarray  # (N+1, 10)
    us: np.ndarray  # (N, 4)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.us = np.asarray(self.us, dtype=float)
        if self.xs.ndim != 2 or self.us.ndim != 2 or self.xs.shape[0] != self.us.shape[0] + 1:
            raise ValueError(f"prediction shapes inconsistent: {self.xs.shape}, {self.us.shape}")

    @property
    def horizon(self) -> int:
        return self.us.shape[0]

    def copy(self) -> "PredictionTrajectory":
        return PredictionTrajectory(self.xs.copy(), self.us.copy())


@dataclass
class ShootingProblem:
    """Stage-wise QP data for one prediction step."""

    stages: list[LinearizedStage]  # length N, each with A, B, defect
    lx: np.ndarray  # (N+1, 10) state reference errors of the prediction
    lu: np.ndarray  # (N, 4) control reference errors
    qs: np.ndarray  # (N+1, 10) per-stage state weights
    rs: np.ndarray  # (N, 4) per-stage control weights
    initial_gap: np.ndarray  # (10,)
    u_pred: np.ndarray  # (N, 4) predicted controls the box limits act on
    limits: ControlLimits | None = field(default_factory=ControlLimits)
    alpha: float = 1.0

    @property
    def horizon(self) -> int:
        return len(self.stages)

    @property
    def gradients(self) -> list[np.ndarray]:
        """Per-stage gradient vectors w_k = diag(q, r) l_k (state block stacked on control block)."""
        return [
            np.concatenate([self.qs[k] * self.lx[k], self.rs[k] * self.lu[k]])
            for k in range(self.horizon)
        ]


@dataclass
class QpSolution:
    dx: np.ndarray  # (N+1, 10)
    du: np.ndarray  # (N, 4)
    kkt_residual: float

    @property
    def step_norm(self) -> float:
        return max(float(np.abs(self.dx).max()), float(np.abs(self.du).max()))


def _coerce_weights(weights, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(weights, WeightVector):
        weights = [weights] * (horizon + 1)
    if len(weights) not in (horizon, horizon + 1):
        raise ValueError(f"need {horizon + 1} weight vectors, got {len(weights)}")
    for w in weights:
        w.validate()
    last = weights[-1]
    qs = np.stack([w.q for w in weights] + ([last.q] if len(weights) == horizon else []))
    rs = np.stack([w.r for w in weights[:horizon]])
    return qs, rs


def build_qp(
    pred: PredictionTrajectory,
    refs: ReferenceWindow,
    weights: WeightVector | Sequence[WeightVector],
    x_meas: State | np.ndarray,
    limits: ControlLimits | None,
    alpha: float,
    dt: float,
    model: QuadrotorModel = QUADROTOR,
) -> ShootingProblem:
    """Linearize the prediction and assemble the stage-wise QP data.

    Defects are ``model.step(x_k, u_k, dt) - x_{k+1}`` on the prediction;
    Jacobians are those of the same discrete map, evaluated stage-wise.
    """
    N = pred.horizon
    if len(refs) < N + 1:
        raise ValueError(f"reference window of length {len(refs)} too short for horizon {N}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    x_meas_vec = x_meas.as_vector() if isinstance(x_meas, State) else np.asarray(x_meas, dtype=float)

    x_next, A, B = model.discretize(pred.xs[:-1], pred.us, dt)
    defects = x_next - pred.xs[1:]
    stages = [LinearizedStage(A[k], B[k], defects[k]) for k in range(N)]

    qs, rs = _coerce_weights(weights, N)
    return ShootingProblem(
        stages=stages,
        lx=pred.xs - refs.xs[: N + 1],
        lu=pred.us - refs.us[:N],
        qs=qs,
        rs=rs,
        initial_gap=x_meas_vec - pred.xs[0],
        u_pred=pred.us.copy(),
        limits=limits,
        alpha=alpha,
    )


def _riccati_solve(
    A: np.ndarray,
    B: np.ndarray,
    defects: np.ndarray,
    qs: np.ndarray,
    rs: np.ndarray,
    qlin: np.ndarray,
    rlin: np.ndarray,
    gap: np.ndarray,
    clamp_val: np.ndarray,
    clamped: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward/forward sweep for the equality-constrained LQ problem.

    Components marked in ``clamped`` are held at ``clamp_val``; their effect
    is folded into the affine term. Returns (dx, du, lam) where ``lam[k]``
    is the costate 2 P_k dx_k + p_k used for stationarity checks.
    """
    N, n, m = B.shape[0], B.shape[1], B.shape[2]
    P = np.diag(qs[N])
    p = qlin[N].copy()
    Ks = [None] * N
    ks = [None] * N
    Ps = [None] * (N + 1)
    ps = [None] * (N + 1)
    Ps[N], ps[N] = P, p

    for k in range(N - 1, -1, -1):
        free = ~clamped[k]
        d = defects[k] + B[k][:, clamped[k]] @ clamp_val[k][clamped[k]]
        Bf = B[k][:, free]
        Pd = P @ d
        qx = qlin[k] + A[k].T @ (p + 2.0 * Pd)
        Qxx = np.diag(qs[k]) + A[k].T @ P @ A[k]
        if np.any(free):
            Quu = np.diag(rs[k][free]) + Bf.T @ P @ Bf
            Qux = Bf.T @ P @ A[k]
            qu = rlin[k][free] + Bf.T @ (p + 2.0 * Pd)
            K = -np.linalg.solve(Quu, Qux)
            kff = -0.5 * np.linalg.solve(Quu, qu)
            P = Qxx + Qux.T @ K
            p = qx + K.T @ qu
        else:
            K = np.zeros((0, n))
            kff = np.zeros(0)
            P = Qxx
            p = qx
        P = 0.5 * (P + P.T)
        Ks[k], ks[k] = K, kff
        Ps[k], ps[k] = P, p

    dx = np.zeros((N + 1, n))
    du = np.zeros((N, m))
    lam = np.zeros((N + 1, n))
    dx[0] = gap
    lam[0] = 2.0 * Ps[0] @ dx[0] + ps[0]
    for k in range(N):
        free = ~clamped[k]
        du[k][clamped[k]] = clamp_val[k][clamped[k]]
        if np.any(free):
            du[k][free] = Ks[k] @ dx[k] + ks[k]
        dx[k + 1] = A[k] @ dx[k] + B[k] @ du[k] + defects[k]
        lam[k + 1] = 2.0 * Ps[k + 1] @ dx[k + 1] + ps[k + 1]
    return dx, du, lam


def _kkt_residual(
    A, B, defects, qs, rs, qlin, rlin, gap, lo, hi, dx, du, lam
) -> float:
    """Max-norm KKT residual of the box-constrained problem at (dx, du, lam)."""
    N = B.shape[0]
    res = float(np.abs(dx[0] - gap).max())
    at_lo = np.isclose(du, lo, rtol=0.0, atol=1e-12)
    at_hi = np.isclose(du, hi, rtol=0.0, atol=1e-12)
    for k in range(N):
        dyn = A[k] @ dx[k] + B[k] @ du[k] + defects[k] - dx[k + 1]
        res = max(res, float(np.abs(dyn).max()))
        grad_u = 2.0 * rs[k] * du[k] + rlin[k] + B[k].T @ lam[k + 1]
        for i in range(du.shape[1]):
            if at_hi[k, i] and not at_lo[k, i]:
                res = max(res, max(0.0, float(grad_u[i])))  # need mu = -grad >= 0
            elif at_lo[k, i] and not at_hi[k, i]:
                res = max(res, max(0.0, float(-grad_u[i])))
            else:
                res = max(res, float(abs(grad_u[i])))
        if k > 0:
            grad_x = 2.0 * qs[k] * dx[k] + qlin[k] + A[k].T @ lam[k + 1] - lam[k]
            res = max(res, float(np.abs(grad_x).max()))
    res = max(res, float(np.abs(2.0 * qs[N] * dx[N] + qlin[N] - lam[N]).max()))
    res = max(res, float(np.maximum(lo - du, 0.0).max()), float(np.maximum(du - hi, 0.0).max()))
    return res


def solve_qp(prob: ShootingProblem, tol: float = 1e-6, max_iter: int = 200) -> QpSolution:
    """Solve the stage-wise QP; raises :class:`QpSolveError` on failure.

    The reported residual is that of the weight-normalized problem (weights
    divided by their largest entry), which keeps the certificate meaningful
    when adapted weights grow very large. The minimizer is unaffected by
    this scaling.
    """
    N = prob.horizon
    A = np.stack([s.A for s in prob.stages])
    B = np.stack([s.B for s in prob.stages])
    defects = np.stack([s.defect for s in prob.stages])
    for name, arr in (("A", A), ("B", B), ("defects", defects), ("gap", prob.initial_gap),
                      ("lx", prob.lx), ("lu", prob.lu), ("q", prob.qs), ("r", prob.rs)):
        if not np.all(np.isfinite(arr)):
            raise QpSolveError(f"non-finite QP data in {name}")

    scale = max(1.0, float(prob.qs.max()), float(prob.rs.max()))
    qs = np.maximum(prob.qs, Q_MIN) / scale
    rs = prob.rs / scale
    if np.any(rs <= 0.0):
        raise QpSolveError("control weights must be positive")
    qlin = prob.alpha * qs * prob.lx
    rlin = prob.alpha * rs * prob.lu

    if prob.limits is None:
        lo = np.full(prob.u_pred.shape, -np.inf)
        hi = np.full(prob.u_pred.shape, np.inf)
    else:
        lo = np.broadcast_to(prob.limits.lower, prob.u_pred.shape) - prob.u_pred
        hi = np.broadcast_to(prob.limits.upper, prob.u_pred.shape) - prob.u_pred
        if np.any(lo > hi):
            raise QpSolveError("infeasible control box bounds")

    clamped = np.zeros((N, CONTROL_DIM), dtype=bool)
    clamp_val = np.zeros((N, CONTROL_DIM))
    at_upper = np.zeros((N, CONTROL_DIM), dtype=bool)
    dual_tol = 1e-10
    res = float("nan")
    seen_sets: set[bytes] = set()
    cycling = False

    for _ in range(max_iter):
        dx, du, lam = _riccati_solve(A, B, defects, qs, rs, qlin, rlin, prob.initial_gap, clamp_val, clamped)

        grad_u = 2.0 * rs * du + rlin + np.einsum("kij,kj->ki", B.transpose(0, 2, 1), lam[1:])

        viol_hi = ~clamped & (du > hi + 1e-12)
        viol_lo = ~clamped & (du < lo - 1e-12)
        # multiplier sign: upper-bound mu = -grad_u, lower-bound mu = +grad_u
        mult = np.where(at_upper, -grad_u, grad_u)
        release = clamped & (mult < -dual_tol)

        if not viol_hi.any() and not viol_lo.any() and not release.any():
            if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(du))):
                raise QpSolveError("QP solve produced non-finite iterates")
            res = _kkt_residual(A, B, defects, qs, rs, qlin, rlin, prob.initial_gap, lo, hi, dx, du, lam)
            if res <= tol:
                return QpSolution(dx, du, res)
            break

        if viol_hi.any() or viol_lo.any():
            clamped |= viol_hi | viol_lo
            at_upper |= viol_hi
            at_upper &= ~viol_lo
            clamp_val = np.where(viol_hi, hi, clamp_val)
            clamp_val = np.where(viol_lo, lo, clamp_val)
        elif not cycling:
            # release every wrong-sign multiplier at once; fall back to
            # single releases if the working set ever repeats
            clamped &= ~release
            at_upper &= ~release
            clamp_val = np.where(release, 0.0, clamp_val)
        else:
            idx = np.unravel_index(np.argmin(np.where(release, mult, np.inf)), mult.shape)
            clamped[idx] = False
            at_upper[idx] = False
            clamp_val[idx] = 0.0

        sig = np.packbits(clamped ^ at_upper).tobytes() + np.packbits(clamped).tobytes()
        if sig in seen_sets:
            cycling = True
        seen_sets.add(sig)
    else:
        raise QpSolveError(f"active-set loop did not converge within {max_iter} iterations", res)
    raise QpSolveError(f"KKT residual {res:.3e} exceeds tolerance {tol:.1e}", res)


def qp_objective(prob: ShootingProblem, dx: np.ndarray, du: np.ndarray) -> float:
    """Objective value sum_k (dz_k + alpha l_k)^T diag(q, r) dz_k, terminal included."""
    qs = np.maximum(prob.qs, Q_MIN)
    val = float(np.sum((dx + prob.alpha * prob.lx) * qs * dx))
    val += float(np.sum((du + prob.alpha * prob.lu) * prob.rs * du))
    return val


def apply_step(
    pred: PredictionTrajectory,
    sol: QpSolution,
    alpha: float,
    limits: ControlLimits | None = None,
    model: QuadrotorModel = QUADROTOR,
) -> PredictionTrajectory:
    """Take the (partial) Newton step, renormalize attitudes, clamp controls."""
    xs = model.project(pred.xs + alpha * sol.dx)
    us = pred.us + alpha * sol.du
    if limits is not None:
        us = np.clip(us, limits.lower, limits.upper)
    return PredictionTrajectory(xs, us)
