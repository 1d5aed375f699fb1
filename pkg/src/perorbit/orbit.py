"""Locating the T-periodic orbit of the full system for small eps > 0.

The pipeline: find a zero of the averaged map inside the domain (grid scan
plus damped Newton), build the periodic fast response along the frozen slow
path from the dichotomy integral formulas (Picard iteration on a uniform
grid), then run Newton shooting on the (k+m)-dimensional period map of the
full system with the variational flow as exact Jacobian.  A converged orbit
carries the diagnostics the existence statement speaks about: the pulled-
back slow samples z(t) (all inside the domain, collapsing as eps -> 0) and
the sup of the adapted norm of y against the dichotomy ball radius.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .averaging import averaged_map, averaged_map_many
from .dichotomy import SpectralSplit, dichotomy_norm, spectral_split
from .errors import (
    ContractionViolated,
    DivergedOutsideDomain,
    MaxIterations,
    NoZeroFound,
    SingularJacobian,
)
from .flow import flow
from .integrate import IntegratorConfig, OdeProblem, integrate

__all__ = ["PeriodicOrbit", "SampledPath", "averaged_zero",
           "solve_fast_periodic", "shoot", "continue_in_eps", "orbit_to_csv",
           "sweep_to_csv"]

_DEFAULT = IntegratorConfig()
_Z_SAMPLES = 256
_GRID_N = 512


@dataclass(frozen=True)
class SampledPath:
    """Periodic path known at uniform grid times; linear interpolation."""

    ts: np.ndarray         # (n+1,) covering [0, T], endpoints duplicated
    values: np.ndarray     # (n+1, m)

    @property
    def T(self):
        return float(self.ts[-1])

    @property
    def m(self):
        return self.values.shape[1]

    def value(self, t):
        if self.m == 0:
            return np.zeros(0)
        u = np.fmod(t, self.T)
        if u < 0:
            u += self.T
        i = min(int(u / self.ts[1]), len(self.ts) - 2)
        w = (u - self.ts[i]) / (self.ts[i + 1] - self.ts[i])
        return (1 - w) * self.values[i] + w * self.values[i + 1]

    def sup_norm(self, norm_fn):
        if self.m == 0:
            return 0.0
        return float(np.max(norm_fn(self.values.T)))


@dataclass(frozen=True)
class PeriodicOrbit:
    epsilon: float
    u0: np.ndarray                  # (k+m,) periodic initial state
    ts: np.ndarray                  # 256 uniform sample times in [0, T]
    xs: np.ndarray                  # (256, k)
    ys: np.ndarray                  # (256, m)
    residual: float                 # ||P_eps(u0) - u0||
    newton_iterations: int
    z_samples: np.ndarray           # (256, k) pulled-back slow samples
    z_diameter: float
    in_domain: bool
    y_sup: float                    # sup of the adapted norm of y(t)
    y_radius: Optional[float]       # dichotomy ball radius, when available
    diagnostics: dict = field(default_factory=dict)


def averaged_zero(system, domain, config=None, grid_per_axis=33,
                  newton_tol=1e-10, max_newton=50, fd_step=1e-6):
    """Zero of the averaged map strictly inside the domain.

    Grid scan for the smallest |map| followed by damped Newton with a
    central-difference Jacobian.  Raises :class:`NoZeroFound` when Newton
    stalls or the zero hugs the boundary.
    """
    cfg = config or _DEFAULT
    pts = domain.interior_grid(grid_per_axis)
    if len(pts) == 0:
        raise NoZeroFound("orbit_solver.averaged_zero: empty interior grid")
    vals = averaged_map_many(system, pts, cfg)
    xi = pts[int(np.argmin(np.linalg.norm(vals, axis=1)))].copy()

    k = system.k
    for _ in range(max_newton):
        f = averaged_map(system, xi, cfg)
        res = float(np.linalg.norm(f))
        if res <= newton_tol:
            if domain.boundary_margin(xi) < 1e-6:
                raise NoZeroFound(
                    "orbit_solver.averaged_zero: zero found within 1e-6 of "
                    "the domain boundary")
            return xi
        probes = []
        for j in range(k):
            e = np.zeros(k)
            e[j] = fd_step
            probes.extend([xi + e, xi - e])
        pv = averaged_map_many(system, np.array(probes), cfg)
        J = np.empty((k, k))
        for j in range(k):
            J[:, j] = (pv[2 * j] - pv[2 * j + 1]) / (2 * fd_step)
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            raise NoZeroFound("orbit_solver.averaged_zero: singular Newton "
                              "Jacobian of the averaged map") from None
        lam = 1.0
        moved = False
        for _ in range(8):
            trial = xi + lam * step
            # the map may blow up outside the domain; damp back inside
            if domain.inside(trial):
                if float(np.linalg.norm(averaged_map(system, trial, cfg))) < res:
                    xi = trial
                    moved = True
                    break
            lam *= 0.5
        if not moved:
            trial = xi + lam * step
            if not domain.inside(trial):
                raise NoZeroFound("orbit_solver.averaged_zero: Newton step "
                                  "left the domain and damping found no "
                                  "interior decrease")
            xi = trial
    raise NoZeroFound(f"orbit_solver.averaged_zero: no zero with |map| <= "
                      f"{newton_tol:g} after {max_newton} Newton steps")


def _period_matrices(A, T, split):
    """Prefactors of the two dichotomy integral formulas."""
    m = A.shape[0]
    eye = np.eye(m)
    EmT = expm(-A * T)
    EpT = expm(A * T)
    G_plus = np.linalg.solve(eye - EmT, split.p_plus)
    G_minus = np.linalg.solve(EpT - eye, split.p_minus)
    return G_plus, G_minus


def solve_fast_periodic(system, x_path, tol=1e-10, constants=None,
                        grid_n=_GRID_N, max_iter=200):
    """Unique T-periodic fast response to a frozen slow path.

    Picard iteration on the pair of dichotomy integral formulas, evaluated
    by trapezoid quadrature on a uniform grid.  ``x_path`` maps t to the
    slow state.  ``constants`` may carry (c, delta, gamma) to check the
    contraction gate cg/delta < 1 up front; when psi2 does not depend on y
    a single evaluation is exact and the loop is skipped.

    Returns ``(SampledPath, n_iterations)``; for m = 0 the empty path.
    """
    m, T = system.m, system.T
    ts = np.linspace(0.0, T, grid_n + 1)
    if m == 0:
        return SampledPath(ts, np.zeros((grid_n + 1, 0))), 0

    if constants is not None:
        c, delta, gamma = constants
        if gamma * c >= delta:
            raise ContractionViolated(
                "orbit_solver.solve_fast_periodic: c*gamma/delta = "
                f"{c * gamma / delta:.3g} >= 1; the fixed point need not contract")

    split = spectral_split(system.A)
    A = system.A
    h = T / grid_n
    D_m = expm(-A * h)          # e^{-A h}
    D_p = expm(A * h)           # e^{+A h}
    G_plus, G_minus = _period_matrices(A, T, split)
    xs = np.stack([np.asarray(x_path(t), dtype=float) for t in ts], axis=0)

    def apply_G(ys):
        g = system.psi2_value(ts, xs.T, ys.T)              # (m, n+1)
        gp = (split.p_plus @ g).T                          # (n+1, m)
        gm = (split.p_minus @ g).T

        # I_plus[j] = int_0^{t_j} e^{-A (t_j - s)} P+ g ds  (trapezoid)
        Ip = np.zeros_like(gp)
        for j in range(1, grid_n + 1):
            Ip[j] = D_m @ (Ip[j - 1] + 0.5 * h * gp[j - 1]) + 0.5 * h * gp[j]
        # I_minus[j] = int_{t_j}^T e^{A (s - t_j)} P- g ds
        Im = np.zeros_like(gm)
        for j in range(grid_n - 1, -1, -1):
            Im[j] = D_p @ (Im[j + 1] + 0.5 * h * gm[j + 1]) + 0.5 * h * gm[j]

        EmT_t = np.stack(_matrix_powers(D_m, grid_n), axis=0)   # e^{-A t_j}
        EpT_t = np.stack(_matrix_powers(D_p, grid_n), axis=0)   # e^{+A t_j}
        y_plus = np.einsum("nij,j->ni", EmT_t, G_plus @ Ip[-1]) + Ip
        # e^{A (T - t_j)} = e^{A T} e^{-A t_j}; accumulate backwards instead
        EpTmt = EpT_t[::-1]                                     # e^{A (T - t_j)}
        y_minus = np.einsum("nij,j->ni", EpTmt, G_minus @ _integral_from_zero(
            D_p, gm, h, grid_n)) - Im
        return y_plus + y_minus

    ys = np.zeros((grid_n + 1, m))
    if not system.psi2_depends_on_y():
        ys = apply_G(ys)
        ys[-1] = ys[0]
        return SampledPath(ts, ys), 1

    diffs = []
    for it in range(1, max_iter + 1):
        new = apply_G(ys)
        new[-1] = new[0]
        diff = float(np.max(dichotomy_norm(split, (new - ys).T)))
        diffs.append(diff)
        ys = new
        if diff <= tol:
            return SampledPath(ts, ys), it
    raise MaxIterations(
        f"orbit_solver.solve_fast_periodic: no contraction to {tol:g} in "
        f"{max_iter} iterations (last diff {diffs[-1]:.3e})")


def _matrix_powers(D, n):
    """[I, D, D^2, ..., D^n]."""
    m = D.shape[0]
    out = [np.eye(m)]
    for _ in range(n):
        out.append(D @ out[-1])
    return out


def _integral_from_zero(D_p, gm, h, grid_n):
    """Trapezoid of int_0^T e^{A s} P- g(s) ds via the step matrix e^{A h}."""
    E = np.eye(D_p.shape[0])
    vals = []
    for j in range(grid_n + 1):
        vals.append(E @ gm[j])
        E = D_p @ E
    vals = np.array(vals)
    return h * (0.5 * vals[0] + vals[1:-1].sum(axis=0) + 0.5 * vals[-1])


def _full_variational_rhs(system, eps):
    k, m = system.k, system.m
    n = k + m

    def rhs(t, u):
        state, V = u[:n], u[n:].reshape(n, n)
        du = system.full_rhs(eps)(t, state)
        J = system.full_jac(eps, t, state)
        return np.concatenate([du, (J @ V).ravel()])

    return rhs


def shoot(system, epsilon, guess, config=None, tol=1e-8, max_newton=25,
          domain=None, y_radius=None, split=None, cond_limit=1e12):
    """Newton on the fixed point of the full period map.

    ``guess`` is either a plain (k+m,) state or a pair (xi, y_path) from the
    averaged stage.  On success all orbit diagnostics are filled: 256
    pulled-back slow samples z(t), the in-domain flag, and the adapted
    sup-norm of y against ``y_radius``.
    """
    cfg = config or _DEFAULT
    if epsilon < 0:
        raise ValueError("orbit_solver.shoot: epsilon must be positive")
    k, m, T = system.k, system.m, system.T
    n = k + m
    if isinstance(guess, tuple):
        xi, y_path = guess
        y0 = y_path.value(0.0) if y_path is not None and m else np.zeros(m)
        u0 = np.concatenate([np.asarray(xi, dtype=float), y0])
    else:
        u0 = np.array(guess, dtype=float)
    if u0.shape != (n,) or not np.all(np.isfinite(u0)):
        raise ValueError("orbit_solver.shoot: guess has wrong shape or is "
                         "not finite")

    if domain is not None:
        lo, hi = domain.bbox()
        c = 0.5 * (lo + hi)
        half = (hi - lo)  # 2x the bbox half-width
        box_lo, box_hi = c - half, c + half
    aug_rhs = _full_variational_rhs(system, epsilon)

    def period_map_with_jac(u):
        w0 = np.concatenate([u, np.eye(n).ravel()])
        traj = integrate(OdeProblem(n=n + n * n, rhs=aug_rhs, t0=0.0, t1=T,
                                    u0=w0), cfg)
        wT = traj.final_state()
        return wT[:n], wT[n:].reshape(n, n), traj

    u = u0.copy()
    iterations = 0
    for it in range(max_newton + 1):
        Pu, M, traj = period_map_with_jac(u)
        F = Pu - u
        res = float(np.linalg.norm(F))
        if domain is not None:
            xsamp = traj.eval(np.linspace(0.0, T, 33))[:, :k]
            if np.any(xsamp < box_lo[:k]) or np.any(xsamp > box_hi[:k]):
                raise DivergedOutsideDomain(
                    "orbit_solver.shoot: slow trajectory left twice the "
                    "domain bounding box")
        if res <= tol:
            iterations = it
            break
        if it == max_newton:
            raise MaxIterations(
                f"orbit_solver.shoot: residual {res:.3e} > {tol:g} after "
                f"{max_newton} Newton iterations")
        J = M - np.eye(n)
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > cond_limit:
            raise SingularJacobian(
                f"orbit_solver.shoot: period-map Jacobian condition "
                f"{cond:.3e} exceeds {cond_limit:g} (multiplier near 1)")
        u = u + np.linalg.solve(J, -F)
        if not np.all(np.isfinite(u)):
            raise DivergedOutsideDomain(
                "orbit_solver.shoot: Newton iterate became non-finite")

    # diagnostics from one clean re-integration of the full system
    full = integrate(OdeProblem(n=n, rhs=system.full_rhs(epsilon), t0=0.0,
                                t1=T, u0=u), cfg)
    ts = np.linspace(0.0, T, _Z_SAMPLES)
    samples = full.eval(ts)
    xs, ys = samples[:, :k], samples[:, k:]

    z = np.empty((_Z_SAMPLES, k))
    z[0] = xs[0]
    for i in range(1, _Z_SAMPLES):
        z[i] = flow(system, 0.0, ts[i], xs[i], cfg)
    dz = z[:, None, :] - z[None, :, :]
    z_diam = float(np.max(np.linalg.norm(dz, axis=2)))

    in_domain = bool(all(domain.inside(p) for p in z)) if domain is not None else True
    if split is None and m:
        split = spectral_split(system.A)
    y_sup = float(np.max(dichotomy_norm(split, ys.T))) if m else 0.0

    return PeriodicOrbit(
        epsilon=float(epsilon), u0=u, ts=ts, xs=xs, ys=ys,
        residual=res, newton_iterations=iterations, z_samples=z,
        z_diameter=z_diam, in_domain=in_domain, y_sup=y_sup,
        y_radius=y_radius,
        diagnostics={"period_map_condition": float(np.linalg.cond(M - np.eye(n)))},
    )


def continue_in_eps(system, domain, eps_list, config=None, tol=1e-8,
                    y_radius=None, split=None):
    """Warm-started sweep over a strictly decreasing list of eps values.

    The first point is seeded from the averaged stage; each later point from
    the previous orbit.  Per-eps failures are recorded and the sweep
    continues.  Returns a list of (eps, PeriodicOrbit | None, error | None).
    """
    eps_list = list(eps_list)
    if not eps_list:
        raise ValueError("orbit_solver.continue_in_eps: eps list is empty")
    if any(e <= 0 for e in eps_list) or any(
            b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("orbit_solver.continue_in_eps: eps values must be "
                         "positive and strictly decreasing")
    cfg = config or _DEFAULT

    xi_star = averaged_zero(system, domain, cfg)
    slow_path = flow_path(system, xi_star, cfg)
    y_path, _ = solve_fast_periodic(system, slow_path)
    guess = (xi_star, y_path)

    results = []
    last_u0 = None
    for eps in eps_list:
        try:
            orbit = shoot(system, eps, guess if last_u0 is None else last_u0,
                          cfg, tol=tol, domain=domain, y_radius=y_radius,
                          split=split)
            results.append((eps, orbit, None))
            last_u0 = orbit.u0
        except Exception as exc:  # recorded, sweep continues
            results.append((eps, None, exc))
    return results


def flow_path(system, xi, config=None):
    """Callable t -> slow state along the unperturbed flow from (0, xi)."""
    from .flow import flow_trajectory
    traj = flow_trajectory(system, 0.0, system.T, xi, config or _DEFAULT)

    def path(t):
        return traj.eval(t)

    return path


def orbit_to_csv(orbit, path):
    """CSV export: header t,x1..xk,y1..ym; 256 uniform dense samples."""
    k = orbit.xs.shape[1]
    m = orbit.ys.shape[1]
    header = ("t," + ",".join(f"x{i + 1}" for i in range(k))
              + ("," if m else "")
              + ",".join(f"y{j + 1}" for j in range(m)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for i, t in enumerate(orbit.ts):
            row = [format(t, ".17g")]
            row += [format(v, ".17g") for v in orbit.xs[i]]
            row += [format(v, ".17g") for v in orbit.ys[i]]
            fh.write(",".join(row) + "\n")


def sweep_to_csv(results, path):
    """Summary CSV: eps,residual,z_diameter,y_sup,iters (failed rows blank)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("eps,residual,z_diameter,y_sup,iters\n")
        for eps, orbit, err in results:
            if orbit is None:
                fh.write(f"{format(eps, '.17g')},,,,\n")
            else:
                fh.write(",".join([
                    format(eps, ".17g"),
                    format(orbit.residual, ".17g"),
                    format(orbit.z_diameter, ".17g"),
                    format(orbit.y_sup, ".17g"),
                    str(orbit.newton_iterations),
                ]) + "\n")
