"""Flow map of the unperturbed slow equation and its variational matrix.

``flow`` integrates x' = psi1(t, x) from (t0, xi) to t; ``flow_with_variation``
carries the k x k variational matrix in the same augmented state (dimension
k + k^2), so both share one error control.  ``flow_many`` integrates a whole
grid of initial conditions as one stacked problem with array-broadcast
expression evaluation; the step controller then works on the pooled error,
which is what the sampled sup-style quantities downstream need.
"""

from __future__ import annotations

import numpy as np

from .errors import IntegrationError
from .integrate import IntegratorConfig, OdeProblem, Trajectory, integrate

__all__ = ["flow", "flow_trajectory", "flow_with_variation",
           "flow_variation_trajectory", "flow_many", "BatchFlow"]

_DEFAULT = IntegratorConfig()


def flow_trajectory(system, t0, t1, xi, config=None):
    """Dense trajectory of x' = psi1(t, x), x(t0) = xi, on [t0, t1]."""
    xi = np.asarray(xi, dtype=float)

    def rhs(t, u):
        return system.psi1_value(t, u)

    problem = OdeProblem(n=system.k, rhs=rhs, t0=t0, t1=t1, u0=xi)
    return integrate(problem, config or _DEFAULT)


def flow(system, t, t0, xi, config=None):
    """The state at time t of the slow flow started at (t0, xi).

    Backward runs (t < t0) integrate the time-reversed right-hand side.
    """
    return flow_trajectory(system, t0, t, xi, config).final_state()


def flow_variation_trajectory(system, t0, t1, xi, config=None):
    """Trajectory of the augmented state [x, vec(Y)], Y' = (dpsi1/dx) Y, Y(t0)=I."""
    k = system.k
    xi = np.asarray(xi, dtype=float)
    u0 = np.concatenate([xi, np.eye(k).ravel()])

    def rhs(t, u):
        x = u[:k]
        Y = u[k:].reshape(k, k)
        J = system.psi1_jac_x(t, x)
        return np.concatenate([system.psi1_value(t, x), (J @ Y).ravel()])

    problem = OdeProblem(n=k + k * k, rhs=rhs, t0=t0, t1=t1, u0=u0)
    return integrate(problem, config or _DEFAULT)


def flow_with_variation(system, t, t0, xi, config=None):
    """Return (x(t), dx(t)/dxi) for the slow flow started at (t0, xi)."""
    k = system.k
    u = flow_variation_trajectory(system, t0, t, xi, config).final_state()
    return u[:k], u[k:].reshape(k, k)


class BatchFlow:
    """Stacked trajectories of ``flow_many``: eval(ts) -> (len(ts), P, k)."""

    def __init__(self, traj: Trajectory, n_points: int, k: int):
        self.traj = traj
        self.n_points = n_points
        self.k = k

    def eval(self, ts):
        ts = np.atleast_1d(ts)
        flat = self.traj.eval(ts)
        return flat.reshape(len(ts), self.n_points, self.k)

    def final_states(self):
        return self.traj.final_state().reshape(self.n_points, self.k)


def flow_many(system, t0, t1, xis, config=None):
    """Integrate the slow flow from many initial conditions at once.

    ``xis`` has shape (P, k).  All points share the adaptive mesh; the local
    error is controlled in an RMS sense over the whole stack.
    """
    xis = np.asarray(xis, dtype=float)
    P, k = xis.shape
    if k != system.k:
        raise ValueError("flow_engine.flow_many: points have wrong dimension")

    def rhs(t, u):
        x = u.reshape(P, k).T           # (k, P) arrays for broadcast eval
        dx = system.psi1_value(t, x)    # (k, P)
        return dx.T.ravel()

    problem = OdeProblem(n=P * k, rhs=rhs, t0=t0, t1=t1, u0=xis.ravel())
    traj = integrate(problem, config or _DEFAULT)
    return BatchFlow(traj, P, k)


def check_in_box(states, bound, origin_op):
    """Raise when any state magnitude exceeds ``bound``; used by sup scans."""
    mx = float(np.max(np.abs(states)))
    if mx > bound:
        raise IntegrationError(f"{origin_op}: trajectory left the bounding box "
                               f"(|u| reached {mx:.3g} > {bound:.3g})")
