"""Cost terms of the receding-horizon problem.

Everything nonlinear (pose error, Jacobians, distances) is frozen at the
measurement, so every term below is an exact quadratic in the decision
variables and the transcribed problem is a convex QP.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..geometry import (
    DistanceResult,
    GradientUndefinedError,
    closest_pair_per_link,
    distance_gradient,
)
from ..model import (
    RobotModel,
    body_jacobian,
    forward_kinematics,
    point_jacobian_world,
    robust_null_projector,
    robust_pinv,
)
from ..se3 import Pose, pose_diff

log = logging.getLogger(__name__)


def reference_twist(T_now: Pose, T_ref: Pose) -> np.ndarray:
    """Log of the relative transform from the measured to the reference pose,
    held fixed across the horizon."""
    return pose_diff(T_now, T_ref)


def predicted_twist(J_now: np.ndarray, q_k, q_now) -> np.ndarray:
    """Linearized twist J(q)(q_k - q) with J and q frozen at the measurement."""
    q_k = np.asarray(q_k, dtype=float).reshape(-1)
    q_now = np.asarray(q_now, dtype=float).reshape(-1)
    return np.asarray(J_now) @ (q_k - q_now)


def relaxation_factor(d: float, cfg) -> float:
    """Goal relaxation in (0, 1]: softens the task weight as the closest
    obstacle approaches, 1 outside the repulsive band."""
    if d >= cfg.d_th2:
        return 1.0
    return float(np.exp(-cfg.alpha * (cfg.d_th2 - d) / (cfg.d_th2 - cfg.d_th1)))


def repulsive_velocity(result: DistanceResult, cfg) -> np.ndarray:
    """Escape velocity along the witness normal, growing linearly inside the
    repulsive band and saturating at the uninvadable boundary."""
    d = result.distance
    if d >= cfg.d_th2:
        return np.zeros(3)
    return result.normal * (cfg.k_rep * (cfg.d_th2 - max(d, cfg.d_th1)))


@dataclass(frozen=True)
class RepulsionTerm:
    """Frozen data of one active repulsive pair."""

    qd_target: np.ndarray  # joint velocity that tracks v+ at the witness
    distance: float
    body_index: int
    obstacle_index: int


@dataclass(frozen=True)
class DistanceRow:
    """Frozen linearization d(q) ~= d_meas + grad (q - q_meas) of one pair."""

    gradient: np.ndarray
    distance: float
    body_index: int
    obstacle_index: int


@dataclass(frozen=True)
class PlannerContext:
    """Measurement-frozen quantities shared by every node of one solve."""

    q: np.ndarray
    qd: np.ndarray
    T_now: Pose
    J_task: np.ndarray
    V_ref: np.ndarray
    N_t: np.ndarray
    lam: float
    d_min: float
    W_stage: np.ndarray      # 6-vector diagonal lam * S * Q_ee
    W_terminal: np.ndarray   # 6-vector diagonal lam * S * Q_ee_f
    Q_rep: np.ndarray
    Q_s: np.ndarray
    Q_s_terminal: np.ndarray
    R: np.ndarray
    repulsions: tuple = ()
    distance_rows: tuple = ()
    sweep: object = None
    fk: tuple = field(default=(), repr=False)
    qd_return: Optional[np.ndarray] = None
    Q_return: Optional[np.ndarray] = None


def _repulsion_target(model: RobotModel, q, qd, result: DistanceResult,
                      cfg, fk) -> np.ndarray:
    J_w = point_jacobian_world(model, q, result.link, result.p_robot, fk=fk)
    v_now = J_w @ qd
    v_plus = v_now + repulsive_velocity(result, cfg)
    return robust_pinv(J_w) @ v_plus


def build_context(model: RobotModel, q, qd, T_ref: Pose,
                  obstacles: Sequence, cfg,
                  posture_target=None) -> PlannerContext:
    """Evaluate all measurement-frozen quantities for one planning cycle.

    When a posture target is given, a null-space velocity toward it is
    penalized alongside the task so the whole configuration, not just the
    end effector, converges to that posture.
    """
    q = np.asarray(q, dtype=float).reshape(-1)
    qd = np.asarray(qd, dtype=float).reshape(-1)
    fk = forward_kinematics(model, q)
    T_now = fk[-1]
    J_task = body_jacobian(model, q, fk=fk)
    V_ref = reference_twist(T_now, T_ref)
    N_t = robust_null_projector(J_task)

    sweep = closest_pair_per_link(model, q, obstacles, fk=fk)
    d_min = sweep.min_distance

    repulsions = []
    rows = []
    for res in sweep.results:
        if res.distance < cfg.activation_radius:
            try:
                grad = distance_gradient(model, q, res, fk=fk)
            except GradientUndefinedError:
                log.warning("distance gradient undefined for body %d / obstacle %d "
                            "(d=%.4f); hard row skipped this cycle",
                            res.body_index, res.obstacle_index, res.distance)
            else:
                rows.append(DistanceRow(gradient=grad, distance=res.distance,
                                        body_index=res.body_index,
                                        obstacle_index=res.obstacle_index))
        if cfg.task_oriented and res.distance < cfg.d_th2:
            repulsions.append(RepulsionTerm(
                qd_target=_repulsion_target(model, q, qd, res, cfg, fk),
                distance=res.distance,
                body_index=res.body_index,
                obstacle_index=res.obstacle_index))

    qd_return = None
    Q_return = None
    if posture_target is not None and cfg.q_return > 0.0:
        target = np.asarray(posture_target, dtype=float).reshape(-1)
        v_cap = 0.5 * model.limits.velocity
        qd_return = np.clip(cfg.k_return * (target - q), -v_cap, v_cap)
        Q_return = np.full(model.n, cfg.q_return)

    lam = relaxation_factor(d_min, cfg) if cfg.task_oriented else 1.0
    S = cfg.task_selection
    q_rep, q_s, r = cfg.stage_weights(model.n)
    return PlannerContext(
        q=q, qd=qd, T_now=T_now, J_task=J_task, V_ref=V_ref, N_t=N_t,
        lam=lam, d_min=d_min,
        W_stage=lam * S * cfg.q_ee,
        W_terminal=lam * S * cfg.q_ee_terminal,
        Q_rep=q_rep, Q_s=q_s, Q_s_terminal=np.full(model.n, cfg.q_s_terminal),
        R=r, repulsions=tuple(repulsions), distance_rows=tuple(rows),
        sweep=sweep, fk=tuple(fk),
        qd_return=qd_return, Q_return=Q_return)


def repulsive_cost(qd_k, result: DistanceResult, model: RobotModel, q_now,
                   cfg, qd_now=None) -> float:
    """Null-space penalty for deviating from the repulsion-tracking velocity.

    Standalone form of the L_rep stage term for a single pair; the
    transcription uses the frozen context instead of re-deriving Jacobians.
    """
    if result.distance >= cfg.d_th2:
        return 0.0
    qd_k = np.asarray(qd_k, dtype=float).reshape(-1)
    q_now = np.asarray(q_now, dtype=float).reshape(-1)
    qd_now = np.zeros_like(q_now) if qd_now is None else \
        np.asarray(qd_now, dtype=float).reshape(-1)
    fk = forward_kinematics(model, q_now)
    N_t = robust_null_projector(body_jacobian(model, q_now, fk=fk))
    target = _repulsion_target(model, q_now, qd_now, result, cfg, fk)
    e = N_t @ (qd_k - target)
    q_rep, _, _ = cfg.stage_weights(model.n)
    return float(e @ (q_rep * e))


def _split(x, n):
    x = np.asarray(x, dtype=float).reshape(-1)
    return x[:n], x[n:]


def stage_cost(x_k, u_k, context: PlannerContext) -> float:
    """Tracking + repulsion + smoothness + input effort for one node."""
    n = context.q.size
    q_k, qd_k = _split(x_k, n)
    u_k = np.asarray(u_k, dtype=float).reshape(-1)
    e_ee = context.V_ref - predicted_twist(context.J_task, q_k, context.q)
    cost = float(e_ee @ (context.W_stage * e_ee))
    for rep in context.repulsions:
        e = context.N_t @ (qd_k - rep.qd_target)
        cost += float(e @ (context.Q_rep * e))
    if context.qd_return is not None:
        e = context.N_t @ (qd_k - context.qd_return)
        cost += float(e @ (context.Q_return * e))
    cost += float(qd_k @ (context.Q_s * qd_k))
    cost += float(u_k @ (context.R * u_k))
    return cost


def terminal_cost(x_N, context: PlannerContext) -> float:
    """Tracking + smoothness with the terminal weights; no input or
    repulsion terms."""
    n = context.q.size
    q_N, qd_N = _split(x_N, n)
    e_ee = context.V_ref - predicted_twist(context.J_task, q_N, context.q)
    cost = float(e_ee @ (context.W_terminal * e_ee))
    cost += float(qd_N @ (context.Q_s_terminal * qd_N))
    return cost


def shooting_defects(X, U, dt: float) -> list:
    """Gaps between each shooting state and the explicit-Euler prediction
    from its predecessor."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    if X.shape[0] != U.shape[0] + 1:
        raise ValueError(f"need N+1 states for N inputs, got {X.shape[0]} "
                         f"states and {U.shape[0]} inputs")
    n = X.shape[1] // 2
    defects = []
    for k in range(U.shape[0]):
        q_k, qd_k = X[k, :n], X[k, n:]
        pred = np.concatenate([q_k + dt * qd_k, qd_k + dt * U[k]])
        defects.append(X[k + 1] - pred)
    return defects
