"""Spectral splitting of the fast linear part and its dichotomy data.

The constant matrix A of the fast equation y' = psi2(t, x, y) - A y is split
into its stable/unstable spectral parts with the matrix sign function
(inverse Newton iteration, no eigenvector ordering issues), giving the
projectors P+ and P-.  From the split we estimate decay constants (c, delta)
on a sampled horizon, affine growth bounds (M, gamma) for psi2 by sampling,
and the fast-variable ball radius c*M/(delta - gamma*c).

gamma and M are sampled estimates, never certificates: the affine bound is a
statement over all (t, x, y), which no finite procedure can verify.  Every
GrowthBounds therefore carries ``sampled_evidence_only=True``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import expm
from scipy.stats import qmc

from .errors import ContractionViolated, ImaginaryAxisEigenvalue, SingularMatrix, UnboundedGrowth

__all__ = ["SpectralSplit", "GrowthBounds", "spectral_split",
           "dichotomy_constants", "dichotomy_norm", "growth_bounds",
           "y_ball_radius"]

_SIGN_MAX_ITER = 50
_DELTA_HAIRCUT = 0.95   # delta = 0.95 * spectral margin, keeps c moderate
_GRID = 256
_INFLATE = 1.05


@dataclass(frozen=True)
class SpectralSplit:
    p_plus: np.ndarray        # projector onto the unstable eigenspace of A
    p_minus: np.ndarray       # projector onto the stable eigenspace
    margin: float             # min |Re lambda| over the spectrum of A
    c: Optional[float] = None
    delta: Optional[float] = None
    sign_iterations: int = 0

    @property
    def m(self):
        return self.p_plus.shape[0]

    def with_constants(self, c, delta):
        return replace(self, c=c, delta=delta)


@dataclass(frozen=True)
class GrowthBounds:
    M: float
    gamma: float
    region: str
    probe_radius: float
    n_samples: int
    sampled_evidence_only: bool = True


def spectral_split(A, tol=1e-12):
    """Split A into spectral projectors via the matrix sign function.

    Newton iteration S <- (S + S^-1)/2 from S = A, stopped when
    ||S^2 - I||_inf <= tol; then P+- = (I +- S)/2.  A singular iterate or a
    stalled iteration means an eigenvalue on (or numerically on) the
    imaginary axis.
    """
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    if m == 0:
        return SpectralSplit(np.zeros((0, 0)), np.zeros((0, 0)), margin=np.inf)
    if A.shape != (m, m):
        raise ValueError("dichotomy.spectral_split: A must be square")

    eye = np.eye(m)
    S = A.copy()
    for it in range(1, _SIGN_MAX_ITER + 1):
        try:
            S_inv = np.linalg.solve(S, eye)
        except np.linalg.LinAlgError:
            raise SingularMatrix(
                "dichotomy.spectral_split: singular sign iterate "
                f"(iteration {it}); eigenvalue on the imaginary axis") from None
        S = 0.5 * (S + S_inv)
        if not np.all(np.isfinite(S)):
            raise SingularMatrix(
                f"dichotomy.spectral_split: non-finite sign iterate (iteration {it})")
        resid = float(np.max(np.abs(S @ S - eye)))
        if resid <= tol:
            break
    else:
        raise ImaginaryAxisEigenvalue(
            "dichotomy.spectral_split: ||S^2-I|| stalled above tolerance after "
            f"{_SIGN_MAX_ITER} iterations; eigenvalue on or near the imaginary axis")

    p_plus = 0.5 * (eye + S)
    p_minus = 0.5 * (eye - S)
    margin = float(np.min(np.abs(np.linalg.eigvals(A).real)))
    return SpectralSplit(p_plus, p_minus, margin=margin, sign_iterations=it)


def dichotomy_constants(split, A, horizon=None):
    """Sampled decay constants (c, delta) with delta = 0.95 * margin.

    c is the sup over a 256-point grid on [0, horizon] of
    max(||e^{-At} P+|| e^{dt}, ||e^{At} P-|| e^{dt}) in the spectral norm,
    clamped to >= 1.  Beyond the horizon (default 10/delta) the bound is
    monotone because delta sits strictly below the margin.
    """
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    if m == 0:
        return 1.0, np.inf
    delta = _DELTA_HAIRCUT * split.margin
    if horizon is None:
        horizon = 10.0 / delta
    if horizon <= 0:
        raise ValueError("dichotomy.dichotomy_constants: horizon must be positive")
    ts = np.linspace(0.0, horizon, _GRID)
    c = 1.0
    # accumulate the projected exponentials E(t) = e^{-At} P+ and F(t) = e^{At} P-;
    # staying inside the projector ranges keeps the growing modes out
    Dm = expm(-A * (ts[1] - ts[0]))
    Dp = expm(A * (ts[1] - ts[0]))
    E = split.p_plus.copy()
    F = split.p_minus.copy()
    for t in ts:
        grow = np.exp(delta * t)
        c = max(c, np.linalg.norm(E, 2) * grow, np.linalg.norm(F, 2) * grow)
        E = Dm @ E
        F = Dp @ F
    return float(c), float(delta)


def dichotomy_norm(split, y):
    """The adapted norm max(||P+ y||, ||P- y||) with Euclidean projections.

    With stacked inputs of shape (m, P) a vector of P norms is returned.
    """
    y = np.asarray(y, dtype=float)
    if split.m == 0:
        return 0.0 if y.ndim <= 1 else np.zeros(y.shape[1])
    plus = np.linalg.norm(split.p_plus @ y, axis=0)
    minus = np.linalg.norm(split.p_minus @ y, axis=0)
    out = np.maximum(plus, minus)
    return float(out) if out.ndim == 0 else out


def _fit_affine(values, radii):
    """Smallest affine majorant M + gamma*r of the sampled cloud.

    Least-squares slope (clamped non-negative), then the intercept is lifted
    until every sample sits below the line.
    """
    if np.ptp(radii) < 1e-14:
        gamma = 0.0
    else:
        slope = np.polyfit(radii, values, 1)[0]
        gamma = max(0.0, float(slope))
    M = float(np.max(values - gamma * radii))
    return max(M, 0.0), gamma


def growth_bounds(system, split, x_region, y_radius_probe, samples=512):
    """Sampled affine bound ||psi2(t,x,y)|| <= M + gamma ||y|| (adapted norm).

    x is drawn quasi-randomly from ``x_region`` (an object with ``bbox()``
    and ``inside()``), y from the adapted-norm ball of the probe radius.
    The fitted pair is inflated by 5% and re-validated on a fresh sample
    (<= 1% violations allowed, re-inflating as needed).  When psi2 does not
    reference y at all, gamma is exactly 0.  Raises UnboundedGrowth when
    doubling the probe radius more than doubles the fitted slope twice in a
    row.
    """
    if samples < 100:
        raise ValueError("dichotomy.growth_bounds: need at least 100 samples")
    m, k = system.m, system.k
    if m == 0:
        return GrowthBounds(0.0, 0.0, region=repr(x_region), probe_radius=0.0,
                            n_samples=0)

    lo, hi = x_region.bbox()
    halton = qmc.Halton(d=2 + k + m, seed=911)
    draws = halton.random(4 * samples)
    ts = draws[:, 0] * system.T
    xs = lo + draws[:, 1:1 + k] * (hi - lo)
    ys_unit = 2.0 * draws[:, 1 + k:1 + k + m] - 1.0
    radius_frac = draws[:, 1 + k + m]
    keep = np.array([x_region.inside(x) for x in xs])
    ts, xs = ts[keep][:samples], xs[keep][:samples]
    ys_unit, radius_frac = ys_unit[keep][:samples], radius_frac[keep][:samples]
    if len(ts) < samples:
        raise ValueError("dichotomy.growth_bounds: region sampling starved; "
                         "bbox much larger than the region")

    def fit_at(probe):
        # rescale each direction draw to a quasi-random radius in [0, probe]
        unit_norms = np.atleast_1d(dichotomy_norm(split, ys_unit.T))
        scale = radius_frac * probe / np.maximum(unit_norms, 1e-300)
        ys = ys_unit * scale[:, None]
        vals = system.psi2_value(ts, xs.T, ys.T)            # (m, P)
        vnorm = dichotomy_norm(split, vals)
        radii = dichotomy_norm(split, ys.T)
        return _fit_affine(np.atleast_1d(vnorm), np.atleast_1d(radii)), (ts, xs, ys)

    depends = system.psi2_depends_on_y()
    if not depends:
        (M0, _), _ = fit_at(y_radius_probe)
        M, gamma = M0 * _INFLATE, 0.0
    else:
        (M0, g0), _ = fit_at(y_radius_probe)
        (_, g1), _ = fit_at(2 * y_radius_probe)
        (_, g2), _ = fit_at(4 * y_radius_probe)
        if g1 > 2 * max(g0, 1e-12) and g2 > 2 * g1:
            raise UnboundedGrowth(
                "dichotomy.growth_bounds: fitted slope more than doubles with "
                f"the probe radius ({g0:.3g} -> {g1:.3g} -> {g2:.3g}); "
                "no affine bound is plausible")
        M, gamma = M0 * _INFLATE, g0 * _INFLATE

    # fresh-sample validation
    fresh = qmc.Halton(d=2 + k + m, seed=1213).random(4 * samples)
    fts = fresh[:, 0] * system.T
    fxs = lo + fresh[:, 1:1 + k] * (hi - lo)
    fys = 2.0 * fresh[:, 1 + k:1 + k + m] - 1.0
    ffrac = fresh[:, 1 + k + m]
    fkeep = np.array([x_region.inside(x) for x in fxs])
    fts, fxs = fts[fkeep][:samples], fxs[fkeep][:samples]
    fys, ffrac = fys[fkeep][:samples], ffrac[fkeep][:samples]
    un = np.atleast_1d(dichotomy_norm(split, fys.T))
    fys = fys * (ffrac * y_radius_probe / np.maximum(un, 1e-300))[:, None]
    for _ in range(8):
        vals = system.psi2_value(fts, fxs.T, fys.T)
        vn = np.atleast_1d(dichotomy_norm(split, vals))
        rn = np.atleast_1d(dichotomy_norm(split, fys.T))
        frac = float(np.mean(vn > M + gamma * rn))
        if frac <= 0.01:
            break
        M, gamma = M * _INFLATE, gamma * _INFLATE

    return GrowthBounds(M=float(M), gamma=float(gamma), region=repr(x_region),
                        probe_radius=float(y_radius_probe), n_samples=samples)


def y_ball_radius(c, delta, gamma, M):
    """The fast-variable ball radius c*M/(delta - gamma*c).

    Raises ContractionViolated when gamma >= delta/c.
    """
    if min(c, delta, gamma, M) < 0 or c < 1:
        raise ValueError("dichotomy.y_ball_radius: need c >= 1 and "
                         "non-negative delta, gamma, M")
    if gamma * c >= delta:
        raise ContractionViolated(
            f"dichotomy.y_ball_radius: gamma={gamma:.6g} >= delta/c="
            f"{delta / c:.6g}; the fast fixed point need not contract")
    return float(c * M / (delta - gamma * c))
