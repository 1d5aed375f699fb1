"""System definitions: the tuple (k, m, T, phi, psi1, psi2, A).

A :class:`SystemSpec` describes the slow/fast system

    x' = eps * phi(t, x, y) + psi1(t, x)        (x in R^k)
    y' = psi2(t, x, y) - A y                    (y in R^m)

with phi, psi1, psi2 given as parsed expression trees, T-periodic in t.
T-periodicity of the user expressions cannot be proved symbolically, so
construction samples |f(t+T) - f(t)| on a 64-point grid at a handful of
probe states and rejects when any residual exceeds 1e-9 * (1 + |f|).

Instances are immutable; the evaluation helpers are pure and accept either
scalar states or stacked arrays of states (one tree walk per expression
evaluates a whole grid).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsl
from .errors import DomainEvalError, ValidationError

__all__ = ["SystemSpec"]

_PERIODICITY_GRID = 64
_PERIODICITY_TOL = 1e-9


@dataclass(frozen=True)
class SystemSpec:
    k: int
    m: int
    T: float
    phi: tuple          # k expression trees over (t, x, y, params)
    psi1: tuple         # k expression trees over (t, x, params)
    psi2: tuple         # m expression trees over (t, x, y, params)
    A: np.ndarray       # m x m
    parameters: dict = field(default_factory=dict)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_strings(cls, k, m, T, phi, psi1, psi2, A, parameters=None):
        """Parse expression sources and validate the assembled system."""
        parameters = dict(parameters or {})
        sig_xy = dsl.Signature(k=k, m=m, params=tuple(parameters))
        sig_x = dsl.Signature(k=k, m=0, params=tuple(parameters))
        spec = cls(
            k=k, m=m, T=float(T),
            phi=tuple(dsl.parse(s, sig_xy) for s in phi),
            psi1=tuple(dsl.parse(s, sig_x) for s in psi1),
            psi2=tuple(dsl.parse(s, sig_xy) for s in psi2),
            A=np.array(A, dtype=float).reshape(m, m) if m else np.zeros((0, 0)),
            parameters=parameters,
        )
        spec.validate()
        return spec

    def validate(self):
        if self.k < 1:
            raise ValidationError("sysdsl.SystemSpec: k must be a positive integer")
        if self.m < 0:
            raise ValidationError("sysdsl.SystemSpec: m must be non-negative")
        if not (self.T > 0):
            raise ValidationError("sysdsl.SystemSpec: period T must be positive")
        if len(self.phi) != self.k or len(self.psi1) != self.k:
            raise ValidationError("sysdsl.SystemSpec: phi and psi1 need k components")
        if len(self.psi2) != self.m:
            raise ValidationError("sysdsl.SystemSpec: psi2 needs m components")
        if self.A.shape != (self.m, self.m):
            raise ValidationError("sysdsl.SystemSpec: A must be m x m")
        if self.m and not np.all(np.isfinite(self.A)):
            raise ValidationError("sysdsl.SystemSpec: A has non-finite entries")
        allowed_xy = dsl.Signature(self.k, self.m, tuple(self.parameters)).names()
        allowed_x = dsl.Signature(self.k, 0, tuple(self.parameters)).names()
        for i, e in enumerate(self.phi):
            extra = dsl.free_vars(e) - allowed_xy
            if extra:
                raise ValidationError(f"sysdsl.SystemSpec: phi[{i}] references {sorted(extra)}")
        for i, e in enumerate(self.psi1):
            extra = dsl.free_vars(e) - allowed_x
            if extra:
                raise ValidationError(f"sysdsl.SystemSpec: psi1[{i}] references {sorted(extra)}")
        for i, e in enumerate(self.psi2):
            extra = dsl.free_vars(e) - allowed_xy
            if extra:
                raise ValidationError(f"sysdsl.SystemSpec: psi2[{i}] references {sorted(extra)}")
        self._check_periodicity()

    def _check_periodicity(self):
        """Sampled T-periodicity check on a fixed deterministic probe set."""
        rng = np.random.default_rng(271828)
        ts = np.linspace(0.0, self.T, _PERIODICITY_GRID, endpoint=False)
        probes = rng.uniform(-1.0, 1.0, size=(8, self.k + self.m))
        groups = (("phi", self.phi, True), ("psi1", self.psi1, False),
                  ("psi2", self.psi2, True))
        for name, exprs, with_y in groups:
            for i, e in enumerate(exprs):
                for p in probes:
                    env = self._env(ts, p[:self.k], p[self.k:] if with_y else None)
                    env_T = dict(env)
                    env_T["t"] = ts + self.T
                    try:
                        f0 = dsl.eval_expr(e, env)
                        f1 = dsl.eval_expr(e, env_T)
                    except DomainEvalError:
                        continue  # probe outside the expression's domain
                    bad = np.abs(f1 - f0) > _PERIODICITY_TOL * (1.0 + np.abs(f0))
                    if np.any(bad):
                        j = int(np.argmax(bad))
                        raise ValidationError(
                            f"sysdsl.SystemSpec: {name}[{i}] is not T-periodic "
                            f"(residual {abs(f1[j] - f0[j]):.3e} at t={ts[j]:.6g})")

    # -- environments ---------------------------------------------------------

    def _env(self, t, x, y=None):
        env = dict(self.parameters)
        env["t"] = t
        for i in range(self.k):
            env[f"x{i + 1}"] = x[i]
        if y is not None:
            for j in range(self.m):
                env[f"y{j + 1}"] = y[j]
        return env

    def x_names(self):
        return tuple(f"x{i + 1}" for i in range(self.k))

    def y_names(self):
        return tuple(f"y{j + 1}" for j in range(self.m))

    # -- evaluation helpers ---------------------------------------------------
    # x is (k,) of scalars or (k, P) of arrays; outputs match.

    def psi1_value(self, t, x):
        env = self._env(t, x)
        return np.array([dsl.eval_expr(e, env) for e in self.psi1])

    def psi1_jac_x(self, t, x):
        """d psi1 / dx; shape (k, k) or (k, k, P) for stacked states."""
        env = self._env(t, x)
        return dsl.jacobian(self.psi1, env, self.x_names())

    def phi_value(self, t, x, y):
        env = self._env(t, x, y)
        return np.array([dsl.eval_expr(e, env) for e in self.phi])

    def psi2_value(self, t, x, y):
        env = self._env(t, x, y)
        return np.array([dsl.eval_expr(e, env) for e in self.psi2])

    def full_rhs(self, eps):
        """Right-hand side (t, u) -> u' of the coupled system at a given eps."""
        k, m, A = self.k, self.m, self.A

        def rhs(t, u):
            x, y = u[:k], u[k:]
            dx = eps * self.phi_value(t, x, y) + self.psi1_value(t, x)
            if m:
                dy = self.psi2_value(t, x, y) - A @ y
                return np.concatenate([dx, dy])
            return dx

        return rhs

    def full_jac(self, eps, t, u):
        """Jacobian of :meth:`full_rhs` with respect to u, shape (k+m, k+m)."""
        k, m = self.k, self.m
        x, y = u[:k], u[k:]
        names = self.x_names() + self.y_names()
        env = self._env(t, x, y)
        J = np.zeros((k + m, k + m))
        J[:k, :] = eps * dsl.jacobian(self.phi, env, names)
        J[:k, :k] += dsl.jacobian(self.psi1, self._env(t, x), self.x_names())
        if m:
            J[k:, :] = dsl.jacobian(self.psi2, env, names)
            J[k:, k:] -= self.A
        return J

    def psi2_depends_on_y(self):
        ynames = set(self.y_names())
        return any(dsl.free_vars(e) & ynames for e in self.psi2)

    def nonsmooth_in_psi1(self):
        """Indices of psi1 components containing abs/norm/sqrt nodes.

        Smoothness of such compositions cannot be decided symbolically; the
        checker records a warning instead of a verdict.
        """
        return [i for i, e in enumerate(self.psi1) if dsl.contains_nonsmooth(e)]
