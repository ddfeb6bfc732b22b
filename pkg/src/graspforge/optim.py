"""Damped Gauss-Newton (Levenberg-Marquardt) over joint configurations.

Shared by keypoint retargeting and distance-matrix decoding. Parameters are
a local update ``[dt(3), drot(3), dangles]`` around the current
configuration (see :meth:`JointConfig.perturbed`); the Jacobian is taken by
central differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kinematics import JointConfig, RobotModel, clamp_to_limits

FD_STEP = 1e-6


@dataclass
class SolveResult:
    q: JointConfig
    cost: float
    history: list = field(default_factory=list)  # cost after every accepted step, starting with q0
    iterations: int = 0
    converged: bool = False


def numeric_jacobian(residual: Callable[[JointConfig], np.ndarray], q: JointConfig, n_params: int, base_free: bool, step: float = FD_STEP):
    cols = []
    offset = 0 if base_free else 6
    for k in range(n_params):
        dx = np.zeros(6 + len(q.angles))
        dx[offset + k] = step
        cols.append((residual(q.perturbed(dx)) - residual(q.perturbed(-dx))) / (2.0 * step))
    return np.stack(cols, axis=1)


def levenberg_marquardt(
    residual: Callable[[JointConfig], np.ndarray],
    model: RobotModel,
    q0: JointConfig,
    max_iters: int = 100,
    tol: float = 1e-12,
    base_free: bool = True,
    damping: float = 1e-3,
    step: float = FD_STEP,
    line_search: int = 4,
) -> SolveResult:
    """Minimize ``||residual(q)||^2`` with joint limits enforced by clamping.

    Damping starts at ``damping``, grows x10 on a rejected step and shrinks
    /3 on an accepted one. A rejected full step is retried at halved lengths
    (clamped to limits each time) before the damping grows. Angles sitting at
    a limit with the gradient pointing outward are frozen for that iteration.
    Stops when the cost falls below ``tol**2``, progress stalls, or
    ``max_iters`` is reached. Accepted costs never increase.
    """
    q = clamp_to_limits(model, q0)
    r = residual(q)
    cost = float(r @ r)
    history = [cost]
    n_ang = len(q.angles)
    n_params = n_ang + (6 if base_free else 0)
    mu = damping
    converged = cost <= tol * tol
    it = 0
    while not converged and it < max_iters:
        it += 1
        J = numeric_jacobian(residual, q, n_params, base_free, step)
        g = J.T @ r
        active = np.ones(n_params, dtype=bool)
        a0 = n_params - n_ang
        at_lo = q.angles <= model.lower + 1e-12
        at_hi = q.angles >= model.upper - 1e-12
        active[a0:] = ~((at_lo & (g[a0:] > 0)) | (at_hi & (g[a0:] < 0)))
        if not active.any():
            converged = True
            break
        Ja = J[:, active]
        H = Ja.T @ Ja
        diag = np.diag(H).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        accepted = False
        while not accepted and mu < 1e16:
            try:
                delta = np.linalg.solve(H + mu * np.diag(diag), -g[active])
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            full = np.zeros(6 + n_ang)
            full[(6 - a0) + np.flatnonzero(active)] = delta
            alpha = 1.0
            for _ in range(line_search + 1):
                cand = clamp_to_limits(model, q.perturbed(alpha * full))
                rc = residual(cand)
                cc = float(rc @ rc)
                if cc < cost:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                mu *= 10.0
        if not accepted:
            converged = True  # no descent direction left at this damping
            break
        if alpha == 1.0:
            mu = max(mu / 3.0, 1e-12)
        improvement = cost - cc
        q, r, cost = cand, rc, cc
        history.append(cost)
        if cost <= tol * tol or improvement <= 1e-15 * max(cost, 1e-300) or np.max(np.abs(alpha * full)) < 1e-15:
            converged = True
    return SolveResult(q, cost, history, it, converged)
