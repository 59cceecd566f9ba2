"""Euler simulation of the reflected process and its derivative.

Each step draws a Brownian increment, pushes the state back into the
cone through the complementarity solve, then advances the derivative:
free increment first, projection onto the constraint subspace of the
faces active after the move.  All paths of a run advance together in a
(paths, coordinates) block, but every path owns its own random stream,
so results are independent of how many paths share a call.

Determinism contract: a configuration (seed, stream layout, dt,
horizon) reproduces trajectories bit-exactly, regardless of chunk
sizes used internally; increments for path p come from the stream
``SeedSequence(seed, spawn_key=(p,))`` in draw order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError
from .geometry import ConeModel, active_faces
from .derivative import OperatorCache, subspace_gap

__all__ = [
    "SimConfig",
    "RngContract",
    "Trajectory",
    "JointTrajectory",
    "brownian_increments",
    "simulate_rbm",
    "simulate_joint",
    "simulate_joint_pair",
    "visit_all_faces_time",
    "write_trajectory_csv",
]

#: Steps per internal chunk; increments are drawn and drift terms
#: precomputed one chunk at a time.  Chunking never changes results.
CHUNK_STEPS = 4096

#: A projection counts as a jump when it moves the derivative by more
#: than this in max norm (matches the single-step recursion).
JUMP_TOL = 1e-12


@dataclass(frozen=True)
class RngContract:
    """Addressable randomness: one (seed, stream) pair per path."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=(self.stream,)))


@dataclass(frozen=True)
class SimConfig:
    """Knobs of one simulation run.

    ``face_tol`` is the base activity tolerance; the per-step
    threshold is ``face_tol * (1 + |Z|)``.  ``decimate`` thins the
    stored grid (every n-th step) for export; estimator calls should
    leave it at 1 so time averages see every step.  ``store_driver``
    keeps the Brownian increments (row k is the increment that
    produced stored point k, row 0 is zero) and requires
    ``decimate=1``.
    """

    dt: float
    horizon: float
    burn_in: float = 0.0
    seed: int = 0
    n_paths: int = 1
    face_tol: float = 1e-9
    decimate: int = 1
    store_driver: bool = False

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.horizon <= 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if not 0.0 <= self.burn_in < self.horizon:
            raise ValueError(
                f"burn_in must lie in [0, horizon), got {self.burn_in}")
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be at least 1, got {self.n_paths}")
        if self.decimate < 1:
            raise ValueError(f"decimate must be at least 1, got {self.decimate}")
        if self.store_driver and self.decimate != 1:
            raise ValueError("store_driver requires decimate=1; a thinned "
                             "grid cannot carry per-step increments")

    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Reflected path of one simulation stream on the stored grid.

    ``face_log`` holds the post-step active sets as bitmasks (bit i-1
    for face i); ``tau_all_faces`` lists the completion times at which
    the running union of visited faces reached every face, union reset
    to the completing step's active set after each completion.
    """

    times: np.ndarray
    z: np.ndarray
    ell: np.ndarray
    face_log: np.ndarray
    tau_all_faces: np.ndarray
    seed: int
    stream: int
    dt: float
    driver: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True, eq=False)
class JointTrajectory(Trajectory):
    """Reflected path together with its pathwise derivative."""

    jac: np.ndarray = field(default=None)  # type: ignore[assignment]


def brownian_increments(rng: RngContract | np.random.Generator,
                        n_steps: int, dt: float, dim: int) -> np.ndarray:
    """Draw the (n_steps, dim) increment block, each row N(0, dt E).

    Drawing k rows and then the rest continues the same sequence: the
    block equals the concatenation of chunked draws from the same
    generator, which is what ties the public contract to the chunked
    internals of the simulator.
    """
    gen = rng.generator() if isinstance(rng, RngContract) else rng
    return gen.standard_normal((n_steps, dim)) * np.sqrt(dt)


def _prepare_masks_constants(model: ConeModel):
    N = model.normals
    R = model.reflections
    Q = np.identity(model.dim) - N.T @ R
    return N, R, Q, bool((Q == 0.0).all())


def _lcp_batch(q, Q, trivial, tol=1e-12, max_iter=500):
    """Least LCP solutions for a (paths, faces) block of q vectors."""
    if trivial:
        return np.maximum(-q, 0.0)
    w = np.zeros_like(q)
    for _ in range(max_iter):
        w_next = np.maximum(w @ Q.T - q, 0.0)
        delta = float(np.abs(w_next - w).max())
        w = w_next
        if delta <= tol:
            return w
    raise ConvergenceError("reflection step did not converge across paths",
                           iterations=max_iter, residual=delta, last=w)


def _simulate(model: ConeModel, cfg: SimConfig, x0, j0_list):
    """Shared engine; j0_list carries zero or more derivative starts."""
    dim = model.dim
    n_paths = cfg.n_paths
    n_rec = len(j0_list)

    x0 = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (dim,):
        raise DomainError(f"x0 must have shape ({dim},), got {x0.shape}")
    active_faces(model, x0, cfg.face_tol * (1.0 + float(np.linalg.norm(x0))))
    j0s = []
    for j0 in j0_list:
        j0 = np.zeros(dim) if j0 is None else np.asarray(j0, dtype=float)
        if j0.shape != (dim,):
            raise DomainError(f"j0 must have shape ({dim},), got {j0.shape}")
        gap = subspace_gap(model, x0, j0)
        if gap > 1e-8:
            raise DomainError(
                f"initial derivative violates the active constraints at x0 "
                f"(gap {gap:.3e})")
        j0s.append(j0)

    N, R, Q, trivial = _prepare_masks_constants(model)
    NT = N.T
    cache = OperatorCache(model) if n_rec else None

    n_steps = cfg.n_steps()
    dec = cfg.decimate
    stored = list(range(0, n_steps + 1, dec))
    if stored[-1] != n_steps:
        stored.append(n_steps)
    store_at = {k: i for i, k in enumerate(stored)}
    n_store = len(stored)

    z_out = np.empty((n_paths, n_store, dim))
    ell_out = np.empty((n_paths, n_store, dim))
    jac_out = np.empty((n_rec, n_paths, n_store, dim)) if n_rec else None
    mask_out = np.zeros((n_paths, n_store), dtype=np.int64)
    driver_out = (np.zeros((n_paths, n_store, dim)) if cfg.store_driver else None)
    taus = [[] for _ in range(n_paths)]

    x = np.tile(x0, (n_paths, 1))
    ell = np.zeros((n_paths, dim))
    jac = np.stack([np.tile(j0, (n_paths, 1)) for j0 in j0s]) if n_rec else None

    mask0 = 0
    for i in np.flatnonzero(
            NT @ x0 <= cfg.face_tol * (1.0 + float(np.linalg.norm(x0)))):
        mask0 |= 1 << int(i)
    z_out[:, 0] = x
    ell_out[:, 0] = 0.0
    if n_rec:
        jac_out[:, :, 0] = jac
    mask_out[:, 0] = mask0

    # Face-visit bookkeeping starts empty: the initial active set is
    # logged but only post-step sets count toward completion times.
    full_mask = (1 << dim) - 1
    cum_mask = np.zeros(n_paths, dtype=np.int64)

    gens = [RngContract(cfg.seed, p).generator() for p in range(n_paths)]
    sqdt = np.sqrt(cfg.dt)
    drift_dt = model.drift * cfg.dt
    b_prime_dt = model.drift_deriv * cfg.dt
    sigma_prime_t = model.dispersion_deriv.T
    r_prime_t = model.reflection_deriv.T
    has_sigma_prime = bool(model.dispersion_deriv.any())
    has_r_prime = bool(model.reflection_deriv.any())

    dw_chunk = np.empty((n_paths, CHUNK_STEPS, dim))
    k = 0
    while k < n_steps:
        chunk = min(CHUNK_STEPS, n_steps - k)
        for p in range(n_paths):
            dw_chunk[p, :chunk] = gens[p].standard_normal((chunk, dim))
        dw = dw_chunk[:, :chunk] * sqdt
        for j in range(chunk):
            dwj = dw[:, j]
            target = x + dwj @ model.dispersion.T + drift_dt
            q = target @ N
            w = _lcp_batch(q, Q, trivial)
            x = target + w @ R.T
            ell += w

            heights = x @ N
            tol = cfg.face_tol * (1.0 + np.sqrt(np.einsum("pj,pj->p", x, x)))
            bits = (heights <= tol[:, np.newaxis]).astype(np.int64)
            masks = (bits << np.arange(dim)).sum(axis=1)

            if n_rec:
                psi = b_prime_dt + (dwj @ sigma_prime_t if has_sigma_prime else 0.0)
                if has_r_prime:
                    psi = psi + w @ r_prime_t
                jac = jac + psi
                if masks.any():
                    for m in np.unique(masks):
                        if m == 0:
                            continue
                        rows = masks == m
                        op_t = cache.get(int(m)).matrix.T
                        jac[:, rows] = jac[:, rows] @ op_t

            cum_mask |= masks
            done = cum_mask == full_mask
            if done.any():
                t_now = (k + j + 1) * cfg.dt
                for p in np.flatnonzero(done):
                    taus[p].append(t_now)
                cum_mask[done] = masks[done]

            idx = store_at.get(k + j + 1)
            if idx is not None:
                z_out[:, idx] = x
                ell_out[:, idx] = ell
                mask_out[:, idx] = masks
                if n_rec:
                    jac_out[:, :, idx] = jac
                if driver_out is not None:
                    driver_out[:, idx] = dwj
        k += chunk

    times = np.asarray(stored, dtype=float) * cfg.dt
    return times, z_out, ell_out, jac_out, mask_out, driver_out, taus


def _build(cls, times, z, ell, jac, masks, driver, taus, cfg, p):
    kwargs = dict(times=times.copy(), z=z[p], ell=ell[p], face_log=masks[p],
                  tau_all_faces=np.asarray(taus[p], dtype=float),
                  seed=cfg.seed, stream=p, dt=cfg.dt,
                  driver=None if driver is None else driver[p])
    if cls is JointTrajectory:
        kwargs["jac"] = jac[0, p]
    return cls(**kwargs)


def simulate_rbm(model: ConeModel, cfg: SimConfig, x0=None) -> list[Trajectory]:
    """Simulate reflected paths only.

    Parameters
    ----------
    model : ConeModel
    cfg : SimConfig
    x0 : (J,) array_like, optional
        Start point inside the cone; the apex when omitted.

    Returns
    -------
    list of Trajectory, one per path (stream p uses (cfg.seed, p)).
    """
    times, z, ell, _, masks, driver, taus = _simulate(model, cfg, x0, [])
    return [_build(Trajectory, times, z, ell, None, masks, driver, taus, cfg, p)
            for p in range(cfg.n_paths)]


def simulate_joint(model: ConeModel, cfg: SimConfig, x0=None,
                   j0=None) -> list[JointTrajectory]:
    """Simulate reflected paths together with the derivative recursion.

    ``j0`` must satisfy the constraints active at ``x0`` (within 1e-8);
    it defaults to zero, the natural start when the parameter does not
    move the initial point.
    """
    times, z, ell, jac, masks, driver, taus = _simulate(model, cfg, x0, [j0])
    return [_build(JointTrajectory, times, z, ell, jac, masks, driver, taus, cfg, p)
            for p in range(cfg.n_paths)]


def simulate_joint_pair(model: ConeModel, cfg: SimConfig, x0=None,
                        j0_a=None, j0_b=None):
    """Two derivative recursions coupled through one reflected path.

    Both recursions see the same Brownian increments, the same
    reflected path and the same face sequence; they differ only in
    their initial value.  Returns a list of (traj_a, traj_b) pairs
    whose difference isolates the projection-product contraction.
    """
    times, z, ell, jac, masks, driver, taus = _simulate(model, cfg, x0,
                                                       [j0_a, j0_b])
    out = []
    for p in range(cfg.n_paths):
        base = dict(times=times.copy(), z=z[p], ell=ell[p], face_log=masks[p],
                    tau_all_faces=np.asarray(taus[p], dtype=float),
                    seed=cfg.seed, stream=p, dt=cfg.dt,
                    driver=None if driver is None else driver[p])
        out.append((JointTrajectory(**base, jac=jac[0, p]),
                    JointTrajectory(**base, jac=jac[1, p])))
    return out


def visit_all_faces_time(traj: Trajectory) -> float | None:
    """First completion time of the face-visit union, None if never."""
    if traj.tau_all_faces.size == 0:
        return None
    return float(traj.tau_all_faces[0])


def write_trajectory_csv(target, traj: Trajectory) -> None:
    """Write a trajectory as CSV: t, Z_*, [J_*,] L_*, faces.

    ``target`` is a path or a text file object.  Metadata lives in
    '#' comment lines; bodies for identical runs are byte-identical.
    """
    close = False
    if isinstance(target, (str, bytes)):
        fh = open(target, "w", newline="")
        close = True
    else:
        fh = target
    try:
        dim = traj.dim
        jac = getattr(traj, "jac", None)
        fh.write(f"# seed={traj.seed} stream={traj.stream} dt={traj.dt:.17g}\n")
        cols = ["t"] + [f"Z_{i}" for i in range(1, dim + 1)]
        if jac is not None:
            cols += [f"J_{i}" for i in range(1, dim + 1)]
        cols += [f"L_{i}" for i in range(1, dim + 1)] + ["faces"]
        fh.write(",".join(cols) + "\n")
        for idx in range(traj.times.shape[0]):
            row = [f"{traj.times[idx]:.17g}"]
            row += [f"{val:.17g}" for val in traj.z[idx]]
            if jac is not None:
                row += [f"{val:.17g}" for val in jac[idx]]
            row += [f"{val:.17g}" for val in traj.ell[idx]]
            row.append(str(int(traj.face_log[idx])))
            fh.write(",".join(row) + "\n")
    finally:
        if close:
            fh.close()
