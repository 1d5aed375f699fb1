"""Adaptive explicit Runge-Kutta 5(4) integration with dense output.

The pair is the classic seven-stage Dormand-Prince scheme with the FSAL
property, a proportional-integral step-size controller, and the standard
quartic interpolant for dense output.  Backward problems are integrated by
time reversal of the right-hand side so a single controller code path is
used in both directions.

Defaults are tight (rtol 1e-10, atol 1e-12): problem dimensions in this
package are small, and downstream identity checks budget roughly two orders
of magnitude of error accumulation on top of the local tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    MaxStepsExceeded,
    NonFiniteDerivative,
    StateBoundExceeded,
    StepSizeUnderflow,
)

__all__ = ["OdeProblem", "IntegratorConfig", "Trajectory", "integrate",
           "trajectory_to_csv"]

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1/5, 3/10, 4/5, 8/9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1/5]),
    np.array([3/40, 9/40]),
    np.array([44/45, -56/15, 32/9]),
    np.array([19372/6561, -25360/2187, 64448/6561, -212/729]),
    np.array([9017/3168, -355/33, 46732/5247, 49/176, -5103/18656]),
    np.array([35/384, 0.0, 500/1113, 125/192, -2187/6784, 11/84]),
]
_B = np.array([35/384, 0.0, 500/1113, 125/192, -2187/6784, 11/84, 0.0])
# difference between the 5th and embedded 4th order weights
_E = np.array([71/57600, 0.0, -71/16695, 71/1920, -17253/339200, 22/525, -1/40])
# quartic dense-output coefficients (row sums reproduce _B)
_P = np.array([
    [1.0, -8048581381/2820520608, 8663915743/2820520608, -12715105075/11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200/32700410799, -68118460800/10900136933, 87487479700/32700410799],
    [0.0, -1754552775/470086768, 14199869525/1410260304, -10690763975/1880347072],
    [0.0, 127303824393/49829197408, -318862633887/49829197408, 701980252875/199316789632],
    [0.0, -282668133/205662961, 2019193451/616988883, -1453857185/822651844],
    [0.0, 40617522/29380423, -110615467/29380423, 69997945/29380423],
])

_ORDER_EXP = 0.2          # 1/(order of the error estimate + 1)
_BETA = 0.04              # integral gain of the PI controller
_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    initial_step: Optional[float] = None
    max_step: Optional[float] = None
    max_steps: int = 100_000
    state_bound: Optional[float] = None  # abort when max|u| exceeds this

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("flow_engine.IntegratorConfig: tolerances must be positive")
        if self.max_steps <= 0:
            raise ValueError("flow_engine.IntegratorConfig: max_steps must be positive")


@dataclass(frozen=True)
class OdeProblem:
    n: int
    rhs: Callable[[float, np.ndarray], np.ndarray]
    t0: float
    t1: float
    u0: np.ndarray


@dataclass(frozen=True)
class StepStats:
    n_accepted: int
    n_rejected: int
    n_rhs: int


class Trajectory:
    """Dense-output solution on a strictly monotone mesh.

    ``ts`` runs from t0 to t1 in the integration direction; ``states`` holds
    the accepted states; ``coeffs[i]`` are the quartic interpolation
    coefficients on [ts[i], ts[i+1]].  Immutable after construction and safe
    to share across threads for read-only evaluation.
    """

    def __init__(self, ts, states, coeffs, stats):
        self.ts = np.asarray(ts)
        self.states = np.asarray(states)
        self.coeffs = np.asarray(coeffs) if len(coeffs) else np.zeros((0, states.shape[1], 4))
        self.stats = stats
        self._ascending = bool(self.ts[-1] >= self.ts[0])

    @property
    def t0(self):
        return float(self.ts[0])

    @property
    def t1(self):
        return float(self.ts[-1])

    @property
    def n(self):
        return self.states.shape[1]

    def _locate(self, t):
        ts = self.ts if self._ascending else -self.ts
        tt = t if self._ascending else -np.asarray(t)
        idx = np.searchsorted(ts, tt, side="right") - 1
        return np.clip(idx, 0, max(len(ts) - 2, 0))

    def eval(self, t):
        """Dense evaluation at time(s) t inside the integration span."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        lo = min(self.t0, self.t1)
        hi = max(self.t0, self.t1)
        slack = 1e-9 * (1.0 + hi - lo)
        if np.any(t_arr < lo - slack) or np.any(t_arr > hi + slack):
            raise ValueError(
                f"flow_engine.Trajectory: time {t!r} outside [{lo}, {hi}]")
        if len(self.ts) == 1:
            out = np.repeat(self.states, len(t_arr), axis=0)
            return out[0] if np.ndim(t) == 0 else out
        idx = self._locate(t_arr)
        t_left = self.ts[idx]
        width = self.ts[idx + 1] - t_left
        theta = (t_arr - t_left) / width
        powers = np.stack([theta, theta**2, theta**3, theta**4], axis=-1)
        out = self.states[idx] + np.einsum("inj,ij->in", self.coeffs[idx], powers)
        return out[0] if np.ndim(t) == 0 else out

    def final_state(self):
        return self.states[-1].copy()


def _initial_step(rhs, t0, u0, f0, direction, rtol, atol, max_step):
    """Standard automatic selection for an order-5 method."""
    scale = atol + rtol * np.abs(u0)
    d0 = np.sqrt(np.mean((u0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    u1 = u0 + h0 * direction * f0
    f1 = rhs(t0 + h0 * direction, u1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** _ORDER_EXP
    return min(100 * h0, h1, max_step)


def integrate(problem, config=None):
    """Integrate ``problem`` and return a dense-output :class:`Trajectory`.

    Raises :class:`StepSizeUnderflow`, :class:`MaxStepsExceeded`,
    :class:`NonFiniteDerivative` or :class:`StateBoundExceeded`, each naming
    the failing time.
    """
    cfg = config or IntegratorConfig()
    t0, t1 = float(problem.t0), float(problem.t1)
    u0 = np.array(problem.u0, dtype=float)
    if u0.shape != (problem.n,):
        raise ValueError("flow_engine.integrate: initial state has wrong length")
    span = t1 - t0
    if span == 0.0:
        return Trajectory(np.array([t0]), u0[None, :], np.zeros((0, problem.n, 4)),
                          StepStats(0, 0, 0))
    direction = 1.0 if span > 0 else -1.0
    L = abs(span)
    ivp_rhs = problem.rhs

    def g(tau, u):
        return direction * np.asarray(ivp_rhs(t0 + direction * tau, u), dtype=float)

    max_step = cfg.max_step if cfg.max_step is not None else L
    nfev = 0

    f0 = g(0.0, u0)
    nfev += 1
    if not np.all(np.isfinite(f0)):
        raise NonFiniteDerivative("flow_engine.integrate: non-finite derivative", t=t0)
    if cfg.initial_step is not None:
        h = min(abs(cfg.initial_step), max_step, L)
    else:
        h = _initial_step(lambda tau, u: g(tau, u), 0.0, u0, f0, 1.0,
                          cfg.rtol, cfg.atol, min(max_step, L))
        nfev += 1

    ts = [t0]
    states = [u0]
    coeffs = []
    K = np.empty((7, problem.n))
    tau = 0.0
    u = u0
    k1 = f0
    fac_old = 1e-4
    n_accepted = n_rejected = 0

    while tau < L:
        if n_accepted + n_rejected >= cfg.max_steps:
            raise MaxStepsExceeded(
                f"flow_engine.integrate: exceeded {cfg.max_steps} steps",
                t=t0 + direction * tau)
        if h <= 16 * np.finfo(float).eps * max(abs(tau), 1.0):
            raise StepSizeUnderflow("flow_engine.integrate: step size underflow",
                                    t=t0 + direction * tau)
        hs = min(h, L - tau)  # clamp the final step without polluting the controller

        K[0] = k1
        for s in range(1, 7):
            du = hs * (_A[s] @ K[:s])
            K[s] = g(tau + _C[s] * hs, u + du)
            nfev += 1
        if not np.all(np.isfinite(K)):
            raise NonFiniteDerivative("flow_engine.integrate: non-finite derivative",
                                      t=t0 + direction * tau)

        u_new = u + hs * (_B @ K)
        err_vec = hs * (_E @ K)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(u), np.abs(u_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))

        if err <= 1.0:
            # accept; PI controller with memory of the previous error
            fac = (err ** _ORDER_EXP if err > 0 else 1e-10) / fac_old ** _BETA
            factor = min(_MAX_FACTOR, max(_MIN_FACTOR, _SAFETY / fac))
            fac_old = max(err, 1e-4)
            tau_new = tau + hs
            t_new = t0 + direction * tau_new
            if cfg.state_bound is not None and np.max(np.abs(u_new)) > cfg.state_bound:
                raise StateBoundExceeded(
                    f"flow_engine.integrate: state magnitude exceeded "
                    f"{cfg.state_bound:g}", t=t_new)
            coeffs.append(hs * (K.T @ _P))
            ts.append(t_new)
            states.append(u_new)
            u = u_new
            k1 = K[6]  # FSAL
            tau = tau_new
            n_accepted += 1
            h = min(hs * factor, max_step)
        else:
            n_rejected += 1
            h = hs * max(_MIN_FACTOR, _SAFETY * err ** -_ORDER_EXP)

    return Trajectory(np.array(ts), np.array(states), np.array(coeffs),
                      StepStats(n_accepted, n_rejected, nfev))


def trajectory_to_csv(traj, path):
    """Write the mesh as CSV: header ``t,u1,...,un``, 17 significant digits."""
    n = traj.n
    header = "t," + ",".join(f"u{i + 1}" for i in range(n))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for t, row in zip(traj.ts, traj.states):
            cells = [format(t, ".17g")] + [format(v, ".17g") for v in row]
            fh.write(",".join(cells) + "\n")
