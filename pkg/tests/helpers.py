"""Independent oracle implementations shared across the test modules.

Everything here is deliberately written from first principles (textbook
formulas, scalar loops, dense linear algebra) so the tests check the
library against a second, unrelated code path.
"""

import numpy as np


def quat_to_rotmat(q):
    """Textbook scalar-first quaternion to 3x3 rotation matrix."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_unit_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def random_state_vector(rng, pos_scale=2.0, vel_scale=2.0):
    return np.concatenate(
        [
            pos_scale * rng.standard_normal(3),
            vel_scale * rng.standard_normal(3),
            random_unit_quat(rng),
        ]
    )


def random_control_vector(rng, c_range=(2.0, 20.0), w_scale=2.0):
    return np.concatenate([[rng.uniform(*c_range)], w_scale * rng.standard_normal(3)])


def central_difference_jacobians(step, x, u, dt, h=1e-6):
    """Central finite differences of a discrete step map."""
    n, m = len(x), len(u)
    A = np.zeros((n, n))
    B = np.zeros((n, m))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        A[:, i] = (step(x + e, u, dt) - step(x - e, u, dt)) / (2 * h)
    for i in range(m):
        e = np.zeros(m)
        e[i] = h
        B[:, i] = (step(x, u + e, dt) - step(x, u - e, dt)) / (2 * h)
    return A, B


def dense_equality_qp(A, B, defects, qs, rs, qlin, rlin, gap):
    """Dense KKT solve of the equality-constrained stage QP.

    Variables z = [x_0..x_N, u_0..u_{N-1}] with objective
    sum x_k' diag(qs_k) x_k + qlin_k' x_k + sum u_k' diag(rs_k) u_k + rlin_k' u_k
    subject to x_0 = gap and x_{k+1} = A_k x_k + B_k u_k + defects_k.
    """
    N, n, m = B.shape[0], B.shape[1], B.shape[2]
    nz = (N + 1) * n + N * m
    H = np.zeros((nz, nz))
    g = np.zeros(nz)
    for k in range(N + 1):
        H[k * n : (k + 1) * n, k * n : (k + 1) * n] = 2 * np.diag(qs[k])
        g[k * n : (k + 1) * n] = qlin[k]
    off = (N + 1) * n
    for k in range(N):
        H[off + k * m : off + (k + 1) * m, off + k * m : off + (k + 1) * m] = 2 * np.diag(rs[k])
        g[off + k * m : off + (k + 1) * m] = rlin[k]
    nc = (N + 1) * n
    E = np.zeros((nc, nz))
    e = np.zeros(nc)
    E[:n, :n] = np.eye(n)
    e[:n] = gap
    for k in range(N):
        r0 = (k + 1) * n
        E[r0 : r0 + n, k * n : (k + 1) * n] = A[k]
        E[r0 : r0 + n, (k + 1) * n : (k + 2) * n] = -np.eye(n)
        E[r0 : r0 + n, off + k * m : off + (k + 1) * m] = B[k]
        e[r0 : r0 + n] = -defects[k]
    KKT = np.block([[H, E.T], [E, np.zeros((nc, nc))]])
    z = np.linalg.solve(KKT, np.concatenate([-g, e]))
    return z[: (N + 1) * n].reshape(N + 1, n), z[off:nz].reshape(N, m)


def random_shooting_data(rng, N, n=10, m=4):
    """Random well-conditioned stage data for QP oracle comparisons."""
    A = np.eye(n) + 0.3 * rng.standard_normal((N, n, n))
    B = 0.5 * rng.standard_normal((N, n, m))
    defects = 0.1 * rng.standard_normal((N, n))
    qs = rng.uniform(0.1, 3.0, (N + 1, n))
    rs = rng.uniform(0.1, 3.0, (N, m))
    lx = rng.standard_normal((N + 1, n))
    lu = rng.standard_normal((N, m))
    gap = 0.5 * rng.standard_normal(n)
    return A, B, defects, qs, rs, lx, lu, gap


def minimize_scalar_convex(f, lo, hi, h=1e-4, iters=100):
    """Numeric minimizer of a smooth convex scalar function on [lo, hi].

    Bisects on the central-difference gradient, which is exact for
    quadratics up to rounding, so the minimizer is located far below the
    sqrt(eps) floor of value-comparison searches.
    """

    def grad(t):
        return (f(t + h) - f(t - h)) / (2 * h)

    if grad(lo) >= 0:
        return lo
    if grad(hi) <= 0:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if grad(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


class LinearModel:
    """LTI test double for the transcription's model interface."""

    def __init__(self, A, B):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)

    def step(self, x, u, dt):
        if np.asarray(x).ndim > 1:
            return x @ self.A.T + u @ self.B.T
        return self.A @ x + self.B @ u

    def jacobians(self, x, u, dt):
        batch = np.asarray(x).shape[:-1]
        return (
            np.broadcast_to(self.A, batch + self.A.shape).copy(),
            np.broadcast_to(self.B, batch + self.B.shape).copy(),
        )

    def discretize(self, x, u, dt):
        A, B = self.jacobians(x, u, dt)
        return self.step(x, u, dt), A, B

    def project(self, x):
        return np.asarray(x, dtype=float).copy()
