"""Joint- and task-space dynamics of serial chains.

``mass_matrix`` assembles M(q) by composite-rigid-body accumulation in world
coordinates; ``inverse_dynamics`` is a world-frame recursive Newton-Euler pass
(gravity enters through a fictitious base acceleration).  The Christoffel-form
Coriolis matrix is built from central differences of M, which keeps the
``Mdot = C + C^T`` identity to finite-difference accuracy; the cheaper
directional product ``coriolis_transpose_qd`` serves the 1 kHz estimator path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import RankDeficiencyError, RobotModel, body_jacobian, forward_kinematics
from .se3 import hat

_FD_STEP = 1e-6


@dataclass(frozen=True)
class DynamicsTerms:
    """Joint-space terms: mass matrix, Christoffel Coriolis matrix, gravity."""

    M: np.ndarray
    C: np.ndarray
    g: np.ndarray


@dataclass(frozen=True)
class TaskDynamicsTerms:
    """Task-space inertia and bias: ``Lambda vdot + eta = wrench``.

    ``Jbar`` is the dynamically consistent generalized inverse
    ``M^-1 J' Lambda``; torques of the form ``(I - J' Jbar') tau`` produce no
    task acceleration.
    """

    Lam: np.ndarray
    eta: np.ndarray
    Jbar: np.ndarray


def _world_com_data(model: RobotModel, frames):
    """World COM positions, rotated inertia tensors and masses, stacked."""
    n = model.n
    coms = np.empty((n, 3))
    inertias = np.empty((n, 3, 3))
    masses = np.empty(n)
    for i, link in enumerate(model.links):
        R = frames[i].rotation
        coms[i] = frames[i].apply(link.com)
        inertias[i] = R @ link.inertia @ R.T
        masses[i] = link.mass
    return coms, inertias, masses


def mass_matrix(model: RobotModel, q: np.ndarray, fk=None) -> np.ndarray:
    """n x n joint-space inertia matrix via composite rigid bodies."""
    frames = fk if fk is not None else forward_kinematics(model, q)
    n = model.n
    coms, inertias, masses = _world_com_data(model, frames)

    # spatial inertia of each link about the world origin (angular-first)
    Io = np.zeros((n, 6, 6))
    for i in range(n):
        chat = hat(coms[i])
        m = masses[i]
        Io[i, :3, :3] = inertias[i] - m * (chat @ chat)
        Io[i, :3, 3:] = m * chat
        Io[i, 3:, :3] = -m * chat
        Io[i, 3:, 3:] = m * np.eye(3)
    # composite inertia of the subtree rooted at each joint
    Ic = np.cumsum(Io[::-1], axis=0)[::-1]

    S = np.empty((n, 6))
    for j in range(n):
        a = frames[j].rotation @ model.joints[j].axis
        S[j, :3] = a
        S[j, 3:] = np.cross(frames[j].translation, a)

    M = np.zeros((n, n))
    for j in range(n):
        y = Ic[j] @ S[j]
        M[: j + 1, j] = S[: j + 1] @ y
        M[j, : j + 1] = M[: j + 1, j]
    return M


def inverse_dynamics(model: RobotModel, q, qd, qdd, fk=None,
                     gravity: bool = True) -> np.ndarray:
    """Joint torques realizing ``qdd`` at state (q, qd):  M qdd + C qd + g."""
    frames = fk if fk is not None else forward_kinematics(model, q)
    qd = np.asarray(qd, dtype=float).reshape(-1)
    qdd = np.asarray(qdd, dtype=float).reshape(-1)
    n = model.n
    coms, inertias, masses = _world_com_data(model, frames)
    axes = np.stack([frames[i].rotation @ model.joints[i].axis for i in range(n)])
    origins = np.stack([frames[i].translation for i in range(n)])

    omega = np.zeros((n, 3))
    alpha = np.zeros((n, 3))
    a_origin = np.zeros((n, 3))
    ac = np.zeros((n, 3))

    w_prev = np.zeros(3)
    al_prev = np.zeros(3)
    ao_prev = -model.gravity if gravity else np.zeros(3)
    o_prev = np.zeros(3)
    for i in range(n):
        r = origins[i] - o_prev
        ao = ao_prev + np.cross(al_prev, r) + np.cross(w_prev, np.cross(w_prev, r))
        w = w_prev + axes[i] * qd[i]
        al = al_prev + axes[i] * qdd[i] + np.cross(w_prev, axes[i] * qd[i])
        rc = coms[i] - origins[i]
        ac[i] = ao + np.cross(al, rc) + np.cross(w, np.cross(w, rc))
        omega[i], alpha[i], a_origin[i] = w, al, ao
        w_prev, al_prev, ao_prev, o_prev = w, al, ao, origins[i]

    tau = np.zeros(n)
    f_child = np.zeros(3)
    n_child = np.zeros(3)  # moment about the child joint origin
    o_child = np.zeros(3)
    for i in range(n - 1, -1, -1):
        F = masses[i] * ac[i]
        N = inertias[i] @ alpha[i] + np.cross(omega[i], inertias[i] @ omega[i])
        f = F + f_child
        mom = N + np.cross(coms[i] - origins[i], F)
        if i < n - 1:
            mom += n_child + np.cross(o_child - origins[i], f_child)
        tau[i] = axes[i] @ mom
        f_child, n_child, o_child = f, mom, origins[i]
    return tau


def gravity_torque(model: RobotModel, q, fk=None) -> np.ndarray:
    z = np.zeros(model.n)
    return inverse_dynamics(model, q, z, z, fk=fk)


def bias_forces(model: RobotModel, q, qd, fk=None) -> np.ndarray:
    """Velocity-and-gravity bias ``C(q, qd) qd + g(q)``."""
    return inverse_dynamics(model, q, qd, np.zeros(model.n), fk=fk)


def _mass_matrix_gradient(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """dM[k] = dM/dq_k by central differences."""
    q = np.asarray(q, dtype=float).reshape(-1)
    n = model.n
    dM = np.empty((n, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = _FD_STEP
        dM[k] = (mass_matrix(model, q + e) - mass_matrix(model, q - e)) / (2 * _FD_STEP)
    return dM


def coriolis_matrix(model: RobotModel, q, qd) -> np.ndarray:
    """Christoffel-form C(q, qd) with C qd equal to the RNEA velocity bias and
    (Mdot - 2C) skew-symmetric."""
    qd = np.asarray(qd, dtype=float).reshape(-1)
    dM = _mass_matrix_gradient(model, q)
    mdot = np.einsum("kij,k->ij", dM, qd)
    t2 = np.einsum("jik,k->ij", dM, qd)
    t3 = np.einsum("ijk,k->ij", dM, qd)
    return 0.5 * (mdot + t2 - t3)


def mdot_qd(model: RobotModel, q, qd, h: float = _FD_STEP) -> np.ndarray:
    """Directional derivative ``Mdot qd`` along the current motion (two mass
    matrix evaluations instead of 2n)."""
    q = np.asarray(q, dtype=float).reshape(-1)
    qd = np.asarray(qd, dtype=float).reshape(-1)
    scale = max(1.0, float(np.linalg.norm(qd)))
    hh = h / scale
    dM = (mass_matrix(model, q + hh * qd) - mass_matrix(model, q - hh * qd)) / (2 * hh)
    return dM @ qd


def coriolis_transpose_qd(model: RobotModel, q, qd, fk=None) -> np.ndarray:
    """``C^T qd`` from the identity ``C^T qd = Mdot qd - C qd``."""
    cqd = bias_forces(model, q, qd, fk=fk) - gravity_torque(model, q, fk=fk)
    return mdot_qd(model, q, qd) - cqd


def dynamics_terms(model: RobotModel, q, qd) -> DynamicsTerms:
    """Full joint-space terms with the explicit Christoffel C matrix."""
    fk = forward_kinematics(model, q)
    return DynamicsTerms(M=mass_matrix(model, q, fk=fk),
                         C=coriolis_matrix(model, q, qd),
                         g=gravity_torque(model, q, fk=fk))


def jacobian_dot_qd(model: RobotModel, q, qd, jac_fn=body_jacobian,
                    h: float = _FD_STEP) -> np.ndarray:
    """``Jdot qd`` by central differences of the Jacobian along the motion."""
    q = np.asarray(q, dtype=float).reshape(-1)
    qd = np.asarray(qd, dtype=float).reshape(-1)
    scale = max(1.0, float(np.linalg.norm(qd)))
    hh = h / scale
    dJ = (jac_fn(model, q + hh * qd) - jac_fn(model, q - hh * qd)) / (2 * hh)
    return dJ @ qd


_TASK_DAMPING = 0.1
_TASK_COND_LIMIT = 1e12


def task_dynamics_from_jacobian(model: RobotModel, q, qd, J, Jdot_qd,
                                damping: float = 0.0, M=None,
                                bias=None) -> TaskDynamicsTerms:
    """Operational-space terms for an arbitrary task Jacobian.

    ``Lambda = (J M^-1 J')^-1`` (regularized by ``damping^2 I`` on request),
    ``Jbar = M^-1 J' Lambda``, ``eta = Jbar'(C qd + g) - Lambda Jdot qd``.
    Raises :class:`RankDeficiencyError` when the apparent inertia is singular
    and no damping was given.  ``M``/``bias`` skip the recomputation when the
    caller already holds them.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    if M is None or bias is None:
        fk = forward_kinematics(model, q)
        if M is None:
            M = mass_matrix(model, q, fk=fk)
        if bias is None:
            bias = bias_forces(model, q, qd, fk=fk)
    b = bias
    MinvJT = np.linalg.solve(M, J.T)
    A = J @ MinvJT
    m = A.shape[0]
    if damping > 0.0:
        Lam = np.linalg.inv(A + damping ** 2 * np.eye(m))
    else:
        if np.linalg.cond(A) > _TASK_COND_LIMIT:
            raise RankDeficiencyError(
                "apparent task inertia is singular; pass damping > 0")
        Lam = np.linalg.inv(A)
    Lam = 0.5 * (Lam + Lam.T)
    Jbar = MinvJT @ Lam
    eta = Jbar.T @ b - Lam @ np.asarray(Jdot_qd, dtype=float).reshape(-1)
    return TaskDynamicsTerms(Lam=Lam, eta=eta, Jbar=Jbar)


def task_dynamics(model: RobotModel, q, qd, damped: bool = False) -> TaskDynamicsTerms:
    """Task-space dynamics at the end-effector (body-frame Jacobian).

    ``damped=True`` regularizes the apparent-inertia inverse so the call
    stays defined near singular configurations.
    """
    J = body_jacobian(model, q)
    Jd_qd = jacobian_dot_qd(model, q, qd)
    return task_dynamics_from_jacobian(
        model, q, qd, J, Jd_qd, damping=_TASK_DAMPING if damped else 0.0)


def forward_dynamics(model: RobotModel, q, qd, tau, tau_ext=None, fk=None,
                     M=None, bias=None) -> np.ndarray:
    """``qdd = M^-1 (tau + tau_ext - C qd - g)``."""
    tau = np.asarray(tau, dtype=float).reshape(-1)
    total = tau if tau_ext is None else tau + np.asarray(tau_ext, dtype=float).reshape(-1)
    if M is None or bias is None:
        frames = fk if fk is not None else forward_kinematics(model, q)
        M = mass_matrix(model, q, fk=frames)
        bias = bias_forces(model, q, qd, fk=frames)
    return np.linalg.solve(M, total - bias)


def kinetic_energy(model: RobotModel, q, qd) -> float:
    qd = np.asarray(qd, dtype=float).reshape(-1)
    return 0.5 * float(qd @ mass_matrix(model, q) @ qd)


def potential_energy(model: RobotModel, q) -> float:
    frames = forward_kinematics(model, q)
    coms, _, masses = _world_com_data(model, frames)
    return -float(np.sum(masses[:, None] * coms * model.gravity[None, :], axis=(0, 1)))


def total_energy(model: RobotModel, q, qd) -> float:
    return kinetic_energy(model, q, qd) + potential_energy(model, q)
