"""Discrete Skorokhod problem: oblique reflection on a time grid.

Given a driving path f with f(t_0) in the cone, the constrained path h
and the pushing record solve, step by step, the linear complementarity
problem that keeps h inside G while pushing only along the reflection
directions of active faces.  In normal coordinates q = N^T (h_k + Δf)
one solves

    z = q + M w,   w >= 0,  z >= 0,  <w, z> = 0,   M = N^T R,

and sets h_{k+1} = h_k + Δf + R w.  Because M = E - Q with Q >= 0 and
rho(Q) < 1, the map w -> (Q w - q)^+ is monotone from w = 0 and
converges to the least solution; that least-element structure is what
makes the discrete problem well posed without any ordering of faces.

The module also carries the 1-D running-maximum oracle (an independent
closed form the solver is tested against) and the deterministic
return-time functional M(x): how long the noise-free reflected path
started at x needs to reach the origin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError
from .geometry import ConeModel, active_faces

__all__ = [
    "DiscretePath",
    "LcpSolution",
    "SPResult",
    "lcp_solve",
    "sp_step",
    "sp_solve_path",
    "sp_1d_oracle",
    "complementarity_gap",
    "lyapunov_m",
]

#: Default fixed-point tolerance for the per-step complementarity solve.
LCP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """A vector-valued path sampled on a strictly increasing grid.

    ``values[k]`` is the state at ``times[k]``; shapes are (K+1,) and
    (K+1, J).  One-dimensional value input is promoted to a single
    column.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        vals = np.array(self.values, dtype=float)
        if t.ndim != 1:
            raise ValueError(f"times must be one-dimensional, got shape {t.shape}")
        if vals.ndim == 1:
            vals = vals[:, np.newaxis]
        if vals.ndim != 2 or vals.shape[0] != t.shape[0]:
            raise ValueError(
                f"values must have shape ({t.shape[0]}, J), got {vals.shape}")
        if t.shape[0] >= 2 and np.diff(t).min() <= 0.0:
            raise ValueError("times must be strictly increasing")
        t.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.times.shape[0]


@dataclass(frozen=True, eq=False)
class LcpSolution:
    """Solution pair of one complementarity solve.

    Satisfies z = q + M w (up to solver tolerance), w, z >= 0 and
    <w, z> = 0; ``iterations`` and ``residual`` record how the fixed
    point stopped.
    """

    w: np.ndarray
    z: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True, eq=False)
class SPResult:
    """Solved Skorokhod problem on a grid.

    All three paths share the grid of the driver: ``constrained`` is h,
    ``pushing`` is g = R ell, and ``local_time`` is the cumulative,
    componentwise nondecreasing ell with ell(t_0) equal to the push (if
    any) that brought the initial point into the cone.
    """

    constrained: DiscretePath
    pushing: DiscretePath
    local_time: DiscretePath


def lcp_solve(M, q, tol: float = LCP_TOL, max_iter: int = 500) -> LcpSolution:
    """Least solution of z = q + M w, w, z >= 0, <w, z> = 0.

    Iterates the monotone fixed point w <- (Q w - q)^+ with
    Q = E - M, starting from w = 0.  For M in the M-matrix regime the
    iterates increase to the least solution; the loop stops when the
    max-norm update falls below ``tol``.

    Raises
    ------
    ConvergenceError
        When ``max_iter`` updates did not reach ``tol``; carries the
        last iterate and its residual.
    """
    M = np.asarray(M, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    Q = np.identity(n) - M
    w = np.zeros(n)
    delta = np.inf
    for iteration in range(1, max_iter + 1):
        w_next = np.maximum(Q @ w - q, 0.0)
        delta = float(np.abs(w_next - w).max())
        w = w_next
        if delta <= tol:
            z = q + M @ w
            return LcpSolution(w=w, z=z, iterations=iteration, residual=delta)
    raise ConvergenceError(
        "complementarity fixed point did not converge",
        iterations=max_iter, residual=delta, last=w)


def _push(NT, R, Q, h_prev, delta_f, tol, max_iter, trivial=False):
    """One reflection step without validation; returns (h_next, w).

    Kept separate so the path solver can call it in a tight loop; the
    math is identical to ``sp_step``.  With ``trivial`` (Q exactly
    zero) the fixed point is w = (-q)^+ in closed form and the loop is
    skipped.
    """
    target = h_prev + delta_f
    q = NT @ target
    if trivial:
        w = np.maximum(-q, 0.0)
        return target + R @ w, w
    w = np.zeros(q.shape[0])
    delta = np.inf
    for _ in range(max_iter):
        w_next = np.maximum(Q @ w - q, 0.0)
        delta = float(np.abs(w_next - w).max())
        w = w_next
        if delta <= tol:
            break
    else:
        raise ConvergenceError(
            "reflection step did not converge",
            iterations=max_iter, residual=delta, last=w)
    return target + R @ w, w


def sp_step(model: ConeModel, h_prev, delta_f,
            tol: float = LCP_TOL, max_iter: int = 500):
    """Advance the constrained path by one driver increment.

    Parameters
    ----------
    model : ConeModel
    h_prev : (J,) array_like
        Constrained state at the beginning of the step, inside the cone.
    delta_f : (J,) array_like
        Driver increment over the step.

    Returns
    -------
    (h_next, delta_ell) : pair of (J,) ndarrays
        New constrained state and the per-face pushing amounts; the
        push is zero when h_prev + delta_f already lies in the cone.
    """
    h_prev = np.asarray(h_prev, dtype=float)
    delta_f = np.asarray(delta_f, dtype=float)
    NT = model.normals.T
    Q = np.identity(model.dim) - NT @ model.reflections
    return _push(NT, model.reflections, Q, h_prev, delta_f, tol, max_iter,
                 trivial=not Q.any())


def sp_solve_path(model: ConeModel, driver: DiscretePath,
                  face_tol: float | None = None) -> SPResult:
    """Solve the Skorokhod problem along a whole driving path.

    The driver must start inside the cone (checked with ``face_tol``);
    increments are then folded through the per-step solve.  ell(t_0)
    is zero for an interior start and records the initial projection
    push otherwise (only relevant when the start sits on the boundary
    within tolerance but on the wrong side numerically).
    """
    if driver.dim != model.dim:
        raise DomainError(
            f"driver has dimension {driver.dim}, model expects {model.dim}")
    f = driver.values
    active_faces(model, f[0], face_tol)  # raises DomainError when outside

    NT = np.ascontiguousarray(model.normals.T)
    R = model.reflections
    Q = np.identity(model.dim) - NT @ R
    trivial = not Q.any()

    steps = len(driver) - 1
    h = np.empty_like(f)
    ell = np.empty_like(f)
    state, w0 = _push(NT, R, Q, np.zeros(model.dim), f[0], LCP_TOL, 500,
                      trivial)
    h[0] = state
    ell[0] = w0
    cumulative = w0.copy()
    for k in range(steps):
        state, w = _push(NT, R, Q, state, f[k + 1] - f[k], LCP_TOL, 500,
                         trivial)
        cumulative += w
        h[k + 1] = state
        ell[k + 1] = cumulative
    times = driver.times
    return SPResult(
        constrained=DiscretePath(times, h),
        pushing=DiscretePath(times, ell @ R.T),
        local_time=DiscretePath(times, ell),
    )


def sp_1d_oracle(driver: DiscretePath) -> DiscretePath:
    """Closed-form solution on the half line with normal reflection.

    For scalar f the constrained path is the running-maximum formula

        h_k = f_k + max(0, max_{j <= k} (-f_j)),

    evaluated exactly; it is the reference the step solver is compared
    against.
    """
    if driver.dim != 1:
        raise ValueError(f"oracle only covers dimension 1, got {driver.dim}")
    f = driver.values[:, 0]
    push = np.maximum(np.maximum.accumulate(-f), 0.0)
    return DiscretePath(driver.times, f + push)


def complementarity_gap(model: ConeModel, result: SPResult) -> float:
    """Largest violation of 'push only while on the face'.

    For every step k and face i with a local time increment above
    1e-10, the post-step face height <h(t_{k+1}), n_i> should be within
    face tolerance of zero.  Returns the largest such height (zero for
    a path that never pushes); callers compare it to their face
    tolerance.
    """
    h = result.constrained.values
    ell = result.local_time.values
    heights = h @ model.normals          # (K+1, J): <h_k, n_i>
    increments = np.diff(ell, axis=0)    # (K, J)
    if increments.size == 0:
        return 0.0
    pushed = increments > 1e-10
    if not pushed.any():
        return 0.0
    return float(np.where(pushed, heights[1:], 0.0).max())


def lyapunov_m(model: ConeModel, x, dt: float = 1e-3,
               zero_tol: float | None = None, horizon: float = 100.0) -> float:
    """Deterministic return time to the origin from x.

    Runs the noise-free reflected dynamics (driver increments b dt)
    from x on a grid of mesh ``dt`` and returns the first grid time at
    which |h| <= zero_tol.  Requires a stable drift; on an unstable
    model the path never reaches the origin and the horizon error
    fires instead.

    Parameters
    ----------
    model : ConeModel
    x : (J,) array_like
        Start point, inside the cone.
    dt : float
        Grid mesh; the returned time is exact up to one mesh.
    zero_tol : float, optional
        Arrival threshold on |h|; defaults to 1e-8 * (1 + |x|).
    horizon : float
        Give-up time.

    Raises
    ------
    ConvergenceError
        If the path has not reached the origin by ``horizon`` (the
        drift is unstable, or the horizon is too short for |x|).
    """
    x = np.asarray(x, dtype=float)
    active_faces(model, x)  # raises DomainError when outside
    if zero_tol is None:
        zero_tol = 1e-8 * (1.0 + float(np.linalg.norm(x)))

    NT = np.ascontiguousarray(model.normals.T)
    R = model.reflections
    Q = np.identity(model.dim) - NT @ R
    step_drift = model.drift * dt

    state = x.copy()
    t = 0.0
    n_steps = int(np.ceil(horizon / dt))
    for k in range(n_steps + 1):
        if float(np.linalg.norm(state)) <= zero_tol:
            return t
        state, _ = _push(NT, R, Q, state, step_drift, LCP_TOL, 500)
        t = (k + 1) * dt
    raise ConvergenceError(
        f"noise-free path from {x} did not reach the origin by t={horizon:g}; "
        "the drift may be unstable or the horizon too short",
        iterations=n_steps, residual=float(np.linalg.norm(state)), last=state)
