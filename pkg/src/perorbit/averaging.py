"""Forced variational solutions, boundary displacements, and the averaged map.

For the slow flow x' = psi1(t, x) with trajectory x(t) from xi at time 0,
``eta`` integrates the inhomogeneous linearization

    z' = (dpsi1/dx)(t, x(t)) z + phi(t, x(t), y(t)),   z(s) = 0,

along that trajectory.  ``displacement`` is eta(T, s, xi) - eta(0, s, xi),
the quantity whose non-vanishing on the domain boundary is hypothesis A2.
``displacement_via_lemma2`` evaluates the same vector through the adjoint
fundamental matrix and a window integral over [s-T, s] with the T-periodic
extension of the coefficient data; the two routes are independent and are
cross-checked in the tests.  ``averaged_map`` is the y=0, s=T displacement
computed in one augmented pass; its Brouwer degree is hypothesis A3 and its
zeros seed the orbit solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import dsl
from .flow import flow_trajectory
from .integrate import IntegratorConfig, OdeProblem, integrate

__all__ = ["PeriodicPath", "DisplacementField", "eta", "displacement",
           "displacement_via_lemma2", "averaged_map", "averaged_map_many",
           "displacement_profile"]

_DEFAULT = IntegratorConfig()
_SUP_GRID = 512
_SUP_INFLATE = 1.02


class PeriodicPath:
    """Truncated Fourier series, exactly T-periodic by phase reduction.

    Each of the m components is mean + sum_n (a_n cos(2 pi n t / T)
    + b_n sin(2 pi n t / T)).  Evaluation reduces t into [0, T) with exact
    fmod first, so two arguments with equal reduced phase give bitwise equal
    values.  The cached sup-norm estimate is a 512-point grid maximum of the
    supplied norm (default: Euclidean), inflated 2%.
    """

    def __init__(self, T, means, cos_coeffs, sin_coeffs, norm_fn=None):
        self.T = float(T)
        self.means = np.atleast_1d(np.asarray(means, dtype=float))
        m = len(self.means)
        if m == 0:
            self.cos_coeffs = np.zeros((0, 1))
            self.sin_coeffs = np.zeros((0, 1))
        else:
            self.cos_coeffs = np.asarray(cos_coeffs, dtype=float).reshape(m, -1)
            self.sin_coeffs = np.asarray(sin_coeffs, dtype=float).reshape(m, -1)
        self.m = m
        self.n_harmonics = self.cos_coeffs.shape[1]
        self._norm = norm_fn or (lambda v: np.linalg.norm(v, axis=0))
        self.sup_norm = self._estimate_sup()

    @classmethod
    def zero(cls, m, T):
        return cls(T, np.zeros(m), np.zeros((m, 1)), np.zeros((m, 1)))

    @classmethod
    def constant(cls, vec, T):
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        m = len(vec)
        return cls(T, vec, np.zeros((m, 1)), np.zeros((m, 1)))

    @classmethod
    def random(cls, rng, m, T, n_harmonics, norm_fn=None, radius=None):
        """Random coefficients; when ``radius`` is given, the path is scaled
        so its grid sup-norm equals the radius exactly."""
        means = rng.normal(size=m)
        cos_c = rng.normal(size=(m, n_harmonics))
        sin_c = rng.normal(size=(m, n_harmonics))
        path = cls(T, means, cos_c, sin_c, norm_fn)
        if radius is not None:
            grid_sup = path.sup_norm / _SUP_INFLATE
            if grid_sup <= 0:
                return cls.zero(m, T)
            s = radius / grid_sup
            path = cls(T, means * s, cos_c * s, sin_c * s, norm_fn)
        return path

    def _estimate_sup(self):
        if self.m == 0:
            return 0.0
        ts = np.linspace(0.0, self.T, _SUP_GRID, endpoint=False)
        vals = self.values(ts)                      # (grid, m)
        sup = float(np.max(self._norm(vals.T)))
        return sup * _SUP_INFLATE

    def _phase(self, t):
        u = np.fmod(t, self.T)
        return np.where(u < 0, u + self.T, u) if np.ndim(u) else (u + self.T if u < 0 else u)

    def value(self, t):
        """Value at a single time, shape (m,)."""
        if self.m == 0:
            return np.zeros(0)
        u = self._phase(float(t))
        w = 2.0 * math.pi / self.T
        n = np.arange(1, self.n_harmonics + 1)
        ang = w * u * n
        return (self.means + self.cos_coeffs @ np.cos(ang)
                + self.sin_coeffs @ np.sin(ang))

    def values(self, ts):
        """Values at an array of times, shape (len(ts), m)."""
        ts = np.asarray(ts, dtype=float)
        if self.m == 0:
            return np.zeros((len(ts), 0))
        u = self._phase(ts)
        w = 2.0 * math.pi / self.T
        n = np.arange(1, self.n_harmonics + 1)
        ang = w * u[:, None] * n[None, :]
        return (self.means[None, :] + np.cos(ang) @ self.cos_coeffs.T
                + np.sin(ang) @ self.sin_coeffs.T)


@dataclass(frozen=True)
class DisplacementField:
    """The map xi -> displacement(system, y, s, xi); deterministic and pure."""

    system: object
    y: PeriodicPath
    s: float

    def __call__(self, xi):
        return displacement(self.system, self.y, self.s, xi)


def _forcing_terms(system, base_traj, y):
    """Callables J(t) and phi(t) along a precomputed base trajectory."""

    def jac(t):
        return system.psi1_jac_x(t, base_traj.eval(t))

    def phi(t):
        return system.phi_value(t, base_traj.eval(t), y.value(t))

    return jac, phi


def eta(system, y, t, s, xi, config=None, base_traj=None):
    """Solution z(t) of the forced linearization with z(s) = 0.

    The linearization runs along the base trajectory started at (0, xi);
    both t and s lie in [0, T], in either order.
    """
    cfg = config or _DEFAULT
    k = system.k
    if base_traj is None:
        base_traj = flow_trajectory(system, 0.0, system.T, xi, cfg)
    if t == s:
        return np.zeros(k)
    jac, phi = _forcing_terms(system, base_traj, y)

    def rhs(tau, z):
        return jac(tau) @ z + phi(tau)

    problem = OdeProblem(n=k, rhs=rhs, t0=s, t1=t, u0=np.zeros(k))
    return integrate(problem, cfg).final_state()


def displacement(system, y, s, xi, config=None):
    """eta(T, s, xi) - eta(0, s, xi), sharing one base-flow integration."""
    cfg = config or _DEFAULT
    base = flow_trajectory(system, 0.0, system.T, xi, cfg)
    zT = eta(system, y, system.T, s, xi, cfg, base_traj=base)
    z0 = eta(system, y, 0.0, s, xi, cfg, base_traj=base)
    return zT - z0


def _adjoint_trajectory(system, base_traj, t0, t1, W0, cfg, shift=0.0):
    """Integrate W' = -W J(t + shift, x(t + shift)), W(t0) = W0."""
    k = system.k

    def rhs(tau, w):
        J = system.psi1_jac_x(tau + shift, base_traj.eval(tau + shift))
        W = w.reshape(k, k)
        return (-W @ J).ravel()

    problem = OdeProblem(n=k * k, rhs=rhs, t0=t0, t1=t1, u0=W0.ravel())
    return integrate(problem, cfg)


def displacement_via_lemma2(system, y, s, xi, config=None, quad_tol=1e-10):
    """The displacement as a window integral of the adjoint times the forcing.

    Integrates W' = -W (dpsi1/dx), W(0) = I (so W is the inverse fundamental
    matrix) and applies adaptive quadrature of W(tau) phi(tau, x(tau), y(tau))
    over [s - T, s], using the T-periodic extension of the coefficient data
    on the negative part of the window.
    """
    cfg = config or _DEFAULT
    k, T = system.k, system.T
    base = flow_trajectory(system, 0.0, T, xi, cfg)
    out = np.zeros(k)

    def integrand_factory(W_traj, shift):
        def component(tau, i):
            W = W_traj.eval(tau).reshape(k, k)
            f = system.phi_value(tau + shift, base.eval(tau + shift),
                                 y.value(tau + shift))
            return float((W @ f)[i])
        return component

    if s > 0:
        W_pos = _adjoint_trajectory(system, base, 0.0, s, np.eye(k), cfg)
        comp = integrand_factory(W_pos, 0.0)
        for i in range(k):
            val, _ = quad(comp, 0.0, s, args=(i,), epsabs=quad_tol,
                          epsrel=quad_tol, limit=200)
            out[i] += val
    if s < T:
        # negative window [s - T, 0): shift time by +T into [s, T)
        W_neg = _adjoint_trajectory(system, base, 0.0, s - T, np.eye(k), cfg,
                                    shift=T)
        comp = integrand_factory(W_neg, T)
        for i in range(k):
            val, _ = quad(comp, s - T, 0.0, args=(i,), epsabs=quad_tol,
                          epsrel=quad_tol, limit=200)
            out[i] += val
    return out


def averaged_map(system, xi, config=None):
    """Period-T averaged displacement at y = 0, one augmented integration.

    State [x, vec(W), zeta] with W' = -W (dpsi1/dx) (the inverse fundamental
    matrix) and zeta' = W phi(t, x, 0); returns zeta(T).
    """
    return averaged_map_many(system, np.asarray(xi, dtype=float)[None, :],
                             config)[0]


def averaged_map_many(system, xis, config=None):
    """Vectorized :func:`averaged_map` over an (P, k) array of points."""
    cfg = config or _DEFAULT
    xis = np.asarray(xis, dtype=float)
    P, k = xis.shape
    zeros_y = np.zeros((system.m, P)) if system.m else None
    width = k + k * k + k

    def rhs(t, u):
        state = u.reshape(P, width)
        x = state[:, :k].T                          # (k, P)
        W = state[:, k:k + k * k].reshape(P, k, k)
        dx = system.psi1_value(t, x)                # (k, P)
        J = system.psi1_jac_x(t, x)                 # (k, k, P)
        Jp = np.moveaxis(J, -1, 0)                  # (P, k, k)
        dW = -np.matmul(W, Jp)
        f = system.phi_value(t, x, zeros_y if system.m else np.zeros((0, P)))
        dz = np.matmul(W, np.moveaxis(np.atleast_2d(f), -1, 0)[..., None])[..., 0]
        return np.concatenate([dx.T, dW.reshape(P, k * k), dz], axis=1).ravel()

    u0 = np.concatenate([xis, np.tile(np.eye(k).ravel(), (P, 1)),
                         np.zeros((P, k))], axis=1)
    problem = OdeProblem(n=P * width, rhs=rhs, t0=0.0, t1=system.T,
                         u0=u0.ravel())
    final = integrate(problem, cfg).final_state().reshape(P, width)
    return final[:, k + k * k:]


def displacement_profile(system, xi, s_values, y_paths, config=None,
                         n_nodes=1024):
    """Displacements for many (s, y) pairs sharing one adjoint integration.

    Returns an array of shape (len(y_paths), len(s_values), k).  Writing
    V(s) = int_0^s W phi dtau and X(T) for the period fundamental matrix,
    the displacement equals X(T) (V(T) - V(s)) + V(s); the cumulative
    integral is evaluated by composite trapezoid on ``n_nodes`` + 1 uniform
    nodes, and the requested s values are snapped onto that grid.

    This is the sampling engine behind the A2 check; it agrees with
    :func:`displacement` to quadrature accuracy.
    """
    cfg = config or _DEFAULT
    k, T = system.k, system.T
    xi = np.asarray(xi, dtype=float)

    # one augmented pass: base point and adjoint W
    def rhs(t, u):
        x = u[:k]
        W = u[k:].reshape(k, k)
        J = system.psi1_jac_x(t, x)
        return np.concatenate([system.psi1_value(t, x), (-W @ J).ravel()])

    u0 = np.concatenate([xi, np.eye(k).ravel()])
    traj = integrate(OdeProblem(n=k + k * k, rhs=rhs, t0=0.0, t1=T, u0=u0), cfg)

    ts = np.linspace(0.0, T, n_nodes + 1)
    dense = traj.eval(ts)
    xs = dense[:, :k].T                                   # (k, nodes)
    Ws = dense[:, k:].reshape(len(ts), k, k)              # (nodes, k, k)
    XT = np.linalg.inv(Ws[-1])                            # X(T) = W(T)^-1

    s_idx = np.clip(np.round(np.asarray(s_values) / T * n_nodes).astype(int),
                    0, n_nodes)
    h = T / n_nodes
    out = np.empty((len(y_paths), len(s_values), k))
    for iy, y in enumerate(y_paths):
        yv = y.values(ts).T if system.m else np.zeros((0, len(ts)))
        f = system.phi_value(ts, xs, yv)                  # (k, nodes)
        g = np.einsum("nij,jn->ni", Ws, f)                # (nodes, k)
        cum = np.zeros((len(ts), k))
        cum[1:] = np.cumsum(0.5 * h * (g[1:] + g[:-1]), axis=0)
        VT = cum[-1]
        for js, si in enumerate(s_idx):
            Vs = cum[si]
            out[iy, js] = XT @ (VT - Vs) + Vs
    return out
