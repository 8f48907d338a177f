"""Transcription of the receding-horizon problem into a convex QP.

Multiple shooting keeps every node state as a decision variable with defect
equality constraints; the variable order [x_0, u_0, x_1, u_1, ..., x_N] keeps
the KKT system banded.  Single shooting eliminates the states by rollout
substitution, condensing the cost and constraint rows onto the inputs; the
condensed problem is dense.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from ..model import RobotModel
from ..se3 import Pose
from .config import MpcConfig
from .costs import PlannerContext, build_context

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerInput:
    """Measured state plus task for one planning cycle."""

    x0: np.ndarray
    T_ref: Pose
    obstacles: tuple = ()
    warm_start: object = None
    posture_target: object = None

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.posture_target is not None:
            object.__setattr__(
                self, "posture_target",
                np.asarray(self.posture_target, dtype=float).reshape(-1))


@dataclass
class MpcProblem:
    method: str
    n: int
    N: int
    dt: float
    context: PlannerContext
    H: object
    g: np.ndarray
    A_eq: object
    b_eq: Optional[np.ndarray]
    A_in: object
    b_in: np.ndarray
    z0: np.ndarray
    z0_feasible: bool
    slack_rows: tuple
    n_distance_rows: int
    x0: np.ndarray
    Phi: Optional[np.ndarray] = field(default=None, repr=False)
    Gamma: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_vars(self) -> int:
        return self.g.size

    def split(self, z: np.ndarray):
        """Decision vector -> (X: (N+1, 2n), U: (N, n))."""
        n, N = self.n, self.N
        if self.method == "multiple":
            X = np.empty((N + 1, 2 * n))
            U = np.empty((N, n))
            for k in range(N):
                base = k * 3 * n
                X[k] = z[base:base + 2 * n]
                U[k] = z[base + 2 * n:base + 3 * n]
            X[N] = z[N * 3 * n:N * 3 * n + 2 * n]
            return X, U
        U = np.asarray(z, dtype=float).reshape(N, n)
        X = (self.Phi @ self.x0 + self.Gamma @ z).reshape(N + 1, 2 * n)
        return X, U

    def join(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        if self.method == "multiple":
            n, N = self.n, self.N
            z = np.empty(self.n_vars)
            for k in range(N):
                base = k * 3 * n
                z[base:base + 2 * n] = X[k]
                z[base + 2 * n:base + 3 * n] = U[k]
            z[N * 3 * n:] = X[N]
            return z
        return np.asarray(U, dtype=float).reshape(-1)


def _clamp_state(model: RobotModel, x0: np.ndarray, dt: float) -> np.ndarray:
    n = model.n
    lo, hi = model.limits.position_lower, model.limits.position_upper
    q = np.clip(x0[:n], lo, hi)
    qd = np.clip(x0[n:], -model.limits.velocity, model.limits.velocity)
    # cap outward velocity at the discrete stopping distance: from the box
    # boundary with outward speed v the best brake still overshoots by
    # v^2/2a + v dt/2, so any larger v makes the node position rows
    # infeasible for every input sequence
    a = model.limits.acceleration
    half = 0.5 * dt * a
    cap_hi = np.sqrt(half ** 2 + 2.0 * a * (hi - q)) - half
    cap_lo = np.sqrt(half ** 2 + 2.0 * a * (q - lo)) - half
    qd = np.clip(qd, -cap_lo, cap_hi)
    if not np.allclose(np.concatenate([q, qd]), x0):
        log.warning("measured state outside the feasible envelope; clamped")
    return np.concatenate([q, qd])


def _rollout(x0: np.ndarray, U: np.ndarray, dt: float) -> np.ndarray:
    n = U.shape[1]
    X = np.empty((U.shape[0] + 1, 2 * n))
    X[0] = x0
    for k in range(U.shape[0]):
        X[k + 1, :n] = X[k, :n] + dt * X[k, n:]
        X[k + 1, n:] = X[k, n:] + dt * U[k]
    return X


def _braking_inputs(model: RobotModel, x0: np.ndarray, N: int, dt: float) -> np.ndarray:
    """Inputs that decelerate to rest at the acceleration limit; defect- and
    velocity-feasible by construction."""
    n = model.n
    a = model.limits.acceleration
    U = np.empty((N, n))
    qd = x0[n:].copy()
    for k in range(N):
        U[k] = np.clip(-qd / dt, -a, a)
        qd = qd + dt * U[k]
    return U


def _warm_inputs(warm, model: RobotModel, N: int) -> Optional[np.ndarray]:
    """Shift-by-one input sequence from a previous solution (last repeated),
    clipped into the input box."""
    if warm is None:
        return None
    U_prev = np.asarray(getattr(warm, "U", None))
    if U_prev is None or U_prev.ndim != 2 or U_prev.shape != (N, model.n):
        return None
    U = np.vstack([U_prev[1:], U_prev[-1:]])
    return np.clip(U, -model.limits.acceleration, model.limits.acceleration)


def transcribe(inp: PlannerInput, cfg: MpcConfig, model: RobotModel) -> MpcProblem:
    n = model.n
    N = cfg.horizon
    dt = cfg.dt
    x0 = _clamp_state(model, inp.x0, dt)
    ctx = build_context(model, x0[:n], x0[n:], inp.T_ref, inp.obstacles, cfg,
                        posture_target=inp.posture_target)

    # per-node quadratic blocks (cost = 0.5 z'Hz + g'z + const)
    J = ctx.J_task
    b_ee = ctx.V_ref + J @ ctx.q
    Pq_stage = 2.0 * (J.T * ctx.W_stage) @ J
    gq_stage = -2.0 * J.T @ (ctx.W_stage * b_ee)
    Pq_term = 2.0 * (J.T * ctx.W_terminal) @ J
    gq_term = -2.0 * J.T @ (ctx.W_terminal * b_ee)
    Pv_stage = 2.0 * np.diag(ctx.Q_s)
    gv_stage = np.zeros(n)
    for rep in ctx.repulsions:
        NQ = ctx.N_t.T * ctx.Q_rep
        Pv_stage += 2.0 * NQ @ ctx.N_t
        gv_stage += -2.0 * NQ @ (ctx.N_t @ rep.qd_target)
    if ctx.qd_return is not None:
        NQ = ctx.N_t.T * ctx.Q_return
        Pv_stage += 2.0 * NQ @ ctx.N_t
        gv_stage += -2.0 * NQ @ (ctx.N_t @ ctx.qd_return)
    Pv_term = 2.0 * np.diag(ctx.Q_s_terminal)
    Pu = 2.0 * np.diag(ctx.R)

    lo, hi = model.limits.position_lower, model.limits.position_upper
    vmax, amax = model.limits.velocity, model.limits.acceleration

    if cfg.method == "multiple":
        return _transcribe_multiple(model, cfg, ctx, x0, Pq_stage, gq_stage,
                                    Pq_term, gq_term, Pv_stage, gv_stage,
                                    Pv_term, Pu, lo, hi, vmax, amax, inp)
    return _transcribe_single(model, cfg, ctx, x0, Pq_stage, gq_stage,
                              Pq_term, gq_term, Pv_stage, gv_stage,
                              Pv_term, Pu, lo, hi, vmax, amax, inp)


def _state_rows_template(n, lo, hi, vmax):
    """(coefficient sign, state coordinate, bound) triples for one node's box."""
    rows = []
    for i in range(n):
        rows.append((+1.0, i, lo[i]))            # q_i >= lo
        rows.append((-1.0, i, -hi[i]))           # -q_i >= -hi
        rows.append((+1.0, n + i, -vmax[i]))     # qd_i >= -vmax
        rows.append((-1.0, n + i, -vmax[i]))     # -qd_i >= -vmax
    return rows


def _feasible_start(x0, model, cfg, warm, make_z0, check):
    """Try warm-shifted inputs, then braking; returns (z0, feasible)."""
    N, dt = cfg.horizon, cfg.dt
    for U in (_warm_inputs(warm, model, N), ):
        if U is not None:
            z0 = make_z0(U)
            if check(z0):
                return z0, True
    U = _braking_inputs(model, x0, N, dt)
    z0 = make_z0(U)
    return z0, check(z0)


def _transcribe_multiple(model, cfg, ctx, x0, Pq_stage, gq_stage, Pq_term,
                         gq_term, Pv_stage, gv_stage, Pv_term, Pu,
                         lo, hi, vmax, amax, inp):
    n, N, dt = model.n, cfg.horizon, cfg.dt
    node = 3 * n
    nz = N * node + 2 * n

    H = sp.lil_matrix((nz, nz))
    g = np.zeros(nz)
    for k in range(N):
        b = k * node
        H[b:b + n, b:b + n] = Pq_stage
        H[b + n:b + 2 * n, b + n:b + 2 * n] = Pv_stage
        H[b + 2 * n:b + 3 * n, b + 2 * n:b + 3 * n] = Pu
        g[b:b + n] = gq_stage
        g[b + n:b + 2 * n] = gv_stage
    bN = N * node
    H[bN:bN + n, bN:bN + n] = Pq_term
    H[bN + n:bN + 2 * n, bN + n:bN + 2 * n] = Pv_term
    g[bN:bN + n] = gq_term
    H = H.tocsr()

    # equalities: initial pin + defects x_{k+1} - F x_k - G u_k = 0
    F = np.eye(2 * n)
    F[:n, n:] = dt * np.eye(n)
    G = np.zeros((2 * n, n))
    G[n:, :] = dt * np.eye(n)
    rows, cols, vals = [], [], []
    b_eq = np.zeros((N + 1) * 2 * n)
    for i in range(2 * n):
        rows.append(i)
        cols.append(i)
        vals.append(1.0)
    b_eq[:2 * n] = x0
    for k in range(N):
        r0 = (k + 1) * 2 * n
        bx = k * node
        bu = k * node + 2 * n
        bx1 = (k + 1) * node
        for i in range(2 * n):
            rows.append(r0 + i)
            cols.append(bx1 + i)
            vals.append(1.0)
            for j in range(2 * n):
                if F[i, j] != 0.0:
                    rows.append(r0 + i)
                    cols.append(bx + j)
                    vals.append(-F[i, j])
            for j in range(n):
                if G[i, j] != 0.0:
                    rows.append(r0 + i)
                    cols.append(bu + j)
                    vals.append(-G[i, j])
    A_eq = sp.csr_matrix((vals, (rows, cols)), shape=((N + 1) * 2 * n, nz))

    # inequalities: velocity box on nodes 1..N, position box on nodes 2..N
    # (q_1 = q_0 + dt qd_0 is fixed by the pin, so no decision variable can
    # act on a node-1 position row), input boxes, distance rows from node 2
    irows, icols, ivals, b_in = [], [], [], []
    slack_rows = []
    box = _state_rows_template(n, lo, hi, vmax)
    r = 0
    for k in range(1, N + 1):
        bx = k * node  # node N has no input block, but its x offset still is N*node
        for sign, coord, bound in box:
            if coord < n and k < 2:
                continue
            irows.append(r)
            icols.append(bx + coord)
            ivals.append(sign)
            b_in.append(bound)
            if coord < n:
                slack_rows.append(r)  # position rows may need repair
            r += 1
    for k in range(N):
        bu = k * node + 2 * n
        for i in range(n):
            irows.append(r)
            icols.append(bu + i)
            ivals.append(+1.0)
            b_in.append(-amax[i])
            r += 1
            irows.append(r)
            icols.append(bu + i)
            ivals.append(-1.0)
            b_in.append(-amax[i])
            r += 1
    n_dist = 0
    for row in ctx.distance_rows:
        rhs = cfg.d_th1 - row.distance + float(row.gradient @ ctx.q)
        for k in range(2, N + 1):
            bx = k * node
            for j in range(n):
                if row.gradient[j] != 0.0:
                    irows.append(r)
                    icols.append(bx + j)
                    ivals.append(row.gradient[j])
            b_in.append(rhs)
            slack_rows.append(r)
            r += 1
            n_dist += 1
    A_in = sp.csr_matrix((ivals, (irows, icols)), shape=(r, nz))
    b_in = np.asarray(b_in)

    def make_z0(U):
        X = _rollout(x0, U, dt)
        z = np.empty(nz)
        for k in range(N):
            b = k * node
            z[b:b + 2 * n] = X[k]
            z[b + 2 * n:b + 3 * n] = U[k]
        z[bN:] = X[N]
        return z

    def check(z):
        return not np.any(A_in @ z < b_in - 1e-9)

    z0, ok = _feasible_start(x0, model, cfg, inp.warm_start, make_z0, check)
    return MpcProblem(method="multiple", n=n, N=N, dt=dt, context=ctx,
                      H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
                      z0=z0, z0_feasible=ok, slack_rows=tuple(slack_rows),
                      n_distance_rows=n_dist, x0=x0)


def _transcribe_single(model, cfg, ctx, x0, Pq_stage, gq_stage, Pq_term,
                       gq_term, Pv_stage, gv_stage, Pv_term, Pu,
                       lo, hi, vmax, amax, inp):
    n, N, dt = model.n, cfg.horizon, cfg.dt
    nz = N * n
    nx = 2 * n

    # rollout sensitivities: x_k = Phi_k x0 + sum_j Gamma[k,j] u_j with
    # F^m G = [[m dt^2 I], [dt I]] in closed form for the double integrator
    Phi = np.zeros(((N + 1) * nx, nx))
    Gamma = np.zeros(((N + 1) * nx, nz))
    for k in range(N + 1):
        Phi[k * nx:k * nx + n, :n] = np.eye(n)
        Phi[k * nx:k * nx + n, n:] = k * dt * np.eye(n)
        Phi[k * nx + n:(k + 1) * nx, n:] = np.eye(n)
        for j in range(k):
            blk = Gamma[k * nx:(k + 1) * nx, j * n:(j + 1) * n]
            blk[:n, :] = (k - 1 - j) * dt * dt * np.eye(n)
            blk[n:, :] = dt * np.eye(n)

    # condense the cost onto the inputs
    Hx = np.zeros(((N + 1) * nx, (N + 1) * nx))
    gx = np.zeros((N + 1) * nx)
    for k in range(N):
        b = k * nx
        Hx[b:b + n, b:b + n] = Pq_stage
        Hx[b + n:b + nx, b + n:b + nx] = Pv_stage
        gx[b:b + n] = gq_stage
        gx[b + n:b + nx] = gv_stage
    bN = N * nx
    Hx[bN:bN + n, bN:bN + n] = Pq_term
    Hx[bN + n:bN + nx, bN + n:bN + nx] = Pv_term
    gx[bN:bN + n] = gq_term

    x_free = Phi @ x0
    HxG = Hx @ Gamma
    H = Gamma.T @ HxG
    for k in range(N):
        H[k * n:(k + 1) * n, k * n:(k + 1) * n] += Pu
    H = 0.5 * (H + H.T)  # symmetrize roundoff
    g = Gamma.T @ (Hx @ x_free + gx)

    # state rows become rows of Gamma; input rows are unit rows
    a_rows, b_in, slack_rows = [], [], []
    r = 0
    box = _state_rows_template(n, lo, hi, vmax)
    for k in range(1, N + 1):
        base = k * nx
        for sign, coord, bound in box:
            if coord < n and k < 2:
                continue
            a_rows.append(sign * Gamma[base + coord])
            b_in.append(bound - sign * x_free[base + coord])
            if coord < n:
                slack_rows.append(r)
            r += 1
    for k in range(N):
        for i in range(n):
            e = np.zeros(nz)
            e[k * n + i] = 1.0
            a_rows.append(e)
            b_in.append(-amax[i])
            r += 1
            a_rows.append(-e)
            b_in.append(-amax[i])
            r += 1
    n_dist = 0
    for row in ctx.distance_rows:
        rhs0 = cfg.d_th1 - row.distance + float(row.gradient @ ctx.q)
        for k in range(2, N + 1):
            base = k * nx
            a = row.gradient @ Gamma[base:base + n]
            a_rows.append(a)
            b_in.append(rhs0 - float(row.gradient @ x_free[base:base + n]))
            slack_rows.append(r)
            r += 1
            n_dist += 1
    A_in = np.vstack(a_rows) if a_rows else np.zeros((0, nz))
    b_in = np.asarray(b_in)

    def make_z0(U):
        return np.asarray(U, dtype=float).reshape(-1)

    def check(z):
        if A_in.shape[0] == 0:
            return True
        return not np.any(A_in @ z < b_in - 1e-9)

    z0, ok = _feasible_start(x0, model, cfg, inp.warm_start, make_z0, check)
    return MpcProblem(method="single", n=n, N=N, dt=dt, context=ctx,
                      H=H, g=g, A_eq=None, b_eq=None, A_in=A_in, b_in=b_in,
                      z0=z0, z0_feasible=ok, slack_rows=tuple(slack_rows),
                      n_distance_rows=n_dist, x0=x0, Phi=Phi, Gamma=Gamma)
