"""Brouwer degree of continuous maps on bounded planar and spatial domains.

For k=2 the degree is the winding number of the map along the oriented
boundary, accumulated from angle increments with adaptive midpoint
insertion.  For k=3 it is the normalized solid-angle flux of the direction
field F/|F| through a triangulated boundary, refined until two levels agree.
Both are plain floating-point computations, robust for the smooth maps the
averaging machinery produces; nothing here is certified.

Domains are balls or sublevel sets {h < 0} of a scalar expression inside a
bounding box.  Level-set boundaries are only supported in the plane, where
the zero contour can be marched and Newton-projected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dsl
from .errors import ContourNotFound, NonConvergent, ZeroOnBoundary

__all__ = ["DomainSpec", "DegreeResult", "TriMesh", "sample_boundary",
           "icosphere", "brouwer_degree"]

_MAX_REFINE = 12
_ANGLE_CAP = np.pi / 2
_ROUND_RESIDUAL = 0.01
_FLUX_AGREE = 0.05


@dataclass(frozen=True)
class DomainSpec:
    """Bounded open domain; ``kind`` is 'ball' or 'level_set'."""

    kind: str
    k: int
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None
    h: Optional[object] = None           # expression tree, h < 0 inside
    box: Optional[np.ndarray] = None     # (2, k) rows: lower, upper
    orientation: int = 1
    _params: dict = field(default_factory=dict)

    @classmethod
    def ball(cls, center, radius, orientation=1):
        center = np.asarray(center, dtype=float)
        if radius <= 0:
            raise ValueError("degree.DomainSpec: radius must be positive")
        return cls(kind="ball", k=len(center), center=center,
                   radius=float(radius), orientation=orientation)

    @classmethod
    def level_set(cls, h, bbox, k=2, parameters=None, orientation=1):
        """Sublevel domain {h < 0}; ``h`` is a source string or parsed tree."""
        parameters = dict(parameters or {})
        if isinstance(h, str):
            h = dsl.parse(h, dsl.Signature(k=k, m=0, params=tuple(parameters)))
        box = np.asarray(bbox, dtype=float).reshape(2, k)
        return cls(kind="level_set", k=k, h=h, box=box,
                   orientation=orientation, _params=parameters)

    def reversed(self):
        """Same domain with the opposite boundary orientation."""
        return DomainSpec(kind=self.kind, k=self.k, center=self.center,
                          radius=self.radius, h=self.h, box=self.box,
                          orientation=-self.orientation, _params=self._params)

    # -- geometry ------------------------------------------------------------

    def bbox(self):
        if self.kind == "ball":
            return self.center - self.radius, self.center + self.radius
        return self.box[0].copy(), self.box[1].copy()

    def diameter(self):
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def _h_env(self, x):
        env = dict(self._params)
        for i in range(self.k):
            env[f"x{i + 1}"] = x[i]
        return env

    def h_value(self, x):
        return dsl.eval_expr(self.h, self._h_env(x))

    def h_gradient(self, x):
        names = tuple(f"x{i + 1}" for i in range(self.k))
        return dsl.jacobian([self.h], self._h_env(x), names)[0]

    def inside(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return bool(np.linalg.norm(x - self.center) < self.radius)
        lo, hi = self.box
        if np.any(x < lo) or np.any(x > hi):
            return False
        return bool(self.h_value(x) < 0)

    def boundary_margin(self, x):
        """Approximate distance from x to the boundary (positive inside)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return float(self.radius - np.linalg.norm(x - self.center))
        g = self.h_gradient(x)
        ng = float(np.linalg.norm(g))
        return float(-self.h_value(x) / max(ng, 1e-12))

    def interior_grid(self, n_per_axis=33):
        """Points of an axis-aligned grid over the bbox that lie inside."""
        lo, hi = self.bbox()
        axes = [np.linspace(lo[i], hi[i], n_per_axis) for i in range(self.k)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        keep = np.array([self.inside(p) for p in pts])
        return pts[keep]

    def _project_to_contour(self, x, tol=1e-12, max_iter=60):
        """Newton projection onto {h = 0} along the gradient direction."""
        x = np.array(x, dtype=float)
        for _ in range(max_iter):
            val = self.h_value(x)
            if abs(val) <= tol * (1.0 + abs(val)):
                return x
            g = self.h_gradient(x)
            n2 = float(g @ g)
            if n2 < 1e-30:
                raise ContourNotFound(
                    "degree.sample_boundary: vanishing gradient during projection")
            x = x - val * g / n2
        raise ContourNotFound("degree.sample_boundary: contour projection "
                              "did not converge")

    def boundary_point(self, param):
        """Boundary point for a parameter (ball: angle; level set: raw point)."""
        if self.kind == "ball":
            return self.center + self.radius * np.array([np.cos(param), np.sin(param)])
        return param

    def boundary_midpoint(self, a, b):
        """Insert a boundary point between two parameters (traversal order)."""
        if self.kind == "ball":
            d = (b - a + np.pi) % (2 * np.pi) - np.pi
            return a + 0.5 * d
        return self._project_to_contour(0.5 * (np.asarray(a) + np.asarray(b)))


@dataclass(frozen=True)
class DegreeResult:
    degree: int
    min_boundary_magnitude: float
    refinement_levels: int


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray   # (V, 3)
    faces: np.ndarray      # (F, 3) int, consistently oriented outward


# --- boundary sampling -------------------------------------------------------


def _trace_contour(domain, n):
    """March the planar zero contour; returns n points, counterclockwise."""
    lo, hi = domain.bbox()
    # seed: scan a coarse interior grid, then bisect outward along +x1
    seed = None
    for p in domain.interior_grid(17):
        seed = p
        break
    if seed is None:
        raise ContourNotFound("degree.sample_boundary: no interior point found")
    a, b = seed.copy(), seed.copy()
    step = (hi[0] - lo[0]) / 64
    while domain.h_value(b) < 0:
        b = b + np.array([step, 0.0])
        if b[0] > hi[0] + (hi[0] - lo[0]):
            raise ContourNotFound("degree.sample_boundary: contour not reached "
                                  "along the scan ray")
    for _ in range(80):
        mid = 0.5 * (a + b)
        if domain.h_value(mid) < 0:
            a = mid
        else:
            b = mid
    start = domain._project_to_contour(0.5 * (a + b))

    ds = 2.0 * np.pi * np.linalg.norm(hi - lo) / (64.0 * max(n, 64))
    ds = max(ds, 1e-6)
    pts = [start]
    x = start
    max_steps = 200 * max(n, 64)
    closed = False
    for i in range(max_steps):
        g = domain.h_gradient(x)
        ng = np.linalg.norm(g)
        if ng < 1e-30:
            raise ContourNotFound("degree.sample_boundary: vanishing gradient "
                                  "on the contour")
        tangent = np.array([-g[1], g[0]]) / ng  # h<0 interior on the left: CCW
        x = domain._project_to_contour(x + ds * tangent)
        if i > 3 and np.linalg.norm(x - start) < 0.75 * ds:
            closed = True
            break
        pts.append(x)
    if not closed:
        raise ContourNotFound("degree.sample_boundary: contour failed to close")
    pts = np.array(pts)
    # resample to n points, uniform in arclength
    seg = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    targets = np.linspace(0.0, total, n, endpoint=False)
    idx = np.searchsorted(arc, targets, side="right") - 1
    idx = np.clip(idx, 0, len(pts) - 1)
    nxt = (idx + 1) % len(pts)
    w = (targets - arc[idx]) / np.maximum(seg[idx], 1e-300)
    raw = pts[idx] * (1 - w)[:, None] + pts[nxt] * w[:, None]
    return np.array([domain._project_to_contour(p, tol=1e-10) for p in raw])


def icosphere(subdivisions):
    """Icosahedral triangulation of the unit sphere; 20*4^s faces."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=int)
    for _ in range(subdivisions):
        verts, faces = _subdivide_sphere(verts, faces)
    return TriMesh(verts, faces)


def _subdivide_sphere(verts, faces):
    verts = list(verts)
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            v = verts[i] + verts[j]
            v = v / np.linalg.norm(v)
            verts.append(v)
            cache[key] = len(verts) - 1
        return cache[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), np.array(new_faces, dtype=int)


def sample_boundary(domain, n):
    """Ordered boundary sample of the domain.

    k=2 returns an (n, 2) closed polyline (counterclockwise for
    orientation=+1); k=3 balls return a :class:`TriMesh` with at least n
    vertices.  Level-set boundaries require k=2.
    """
    if domain.k == 2:
        if n < 16:
            raise ValueError("degree.sample_boundary: need n >= 16 for k=2")
        if domain.kind == "ball":
            angles = 2 * np.pi * np.arange(n) / n
            pts = domain.center + domain.radius * np.stack(
                [np.cos(angles), np.sin(angles)], axis=1)
        else:
            pts = _trace_contour(domain, n)
        return pts if domain.orientation > 0 else pts[::-1].copy()
    if domain.k == 3:
        if n < 128:
            raise ValueError("degree.sample_boundary: need n >= 128 for k=3")
        if domain.kind != "ball":
            raise ValueError("degree.sample_boundary: level-set boundaries are "
                             "only supported in the plane")
        subdiv = 0
        while 10 * 4 ** subdiv + 2 < n:
            subdiv += 1
        mesh = icosphere(subdiv)
        verts = domain.center + domain.radius * mesh.vertices
        faces = mesh.faces if domain.orientation > 0 else mesh.faces[:, ::-1].copy()
        return TriMesh(verts, faces)
    raise ValueError("degree.sample_boundary: only k=2 and k=3 are supported")


# --- degree ------------------------------------------------------------------


def _as_batched(F):
    def many(points):
        points = np.asarray(points, dtype=float)
        out = np.asarray(F(points))
        if out.shape != points.shape:
            raise ValueError("degree.brouwer_degree: map must return one "
                             "vector per input point")
        return out
    return many


def _winding_degree(F, domain, zero_tol, max_refinement):
    n0 = 64 if domain.kind == "ball" else 128
    if domain.kind == "ball":
        params = list(2 * np.pi * np.arange(n0) / n0)
        if domain.orientation < 0:
            params = params[::-1]
        points = [domain.boundary_point(p) for p in params]
    else:
        points = list(sample_boundary(domain, n0))
        params = points
    values = list(F(np.array(points)))

    def norms():
        return np.linalg.norm(np.array(values), axis=1)

    mags = norms()
    max_mag = float(np.max(mags))
    tol = zero_tol if zero_tol is not None else 1e-8 * (1.0 + max_mag)
    min_mag = float(np.min(mags))
    if min_mag <= tol:
        raise ZeroOnBoundary(
            f"degree.brouwer_degree: |F| = {min_mag:.3e} <= {tol:.3e} "
            "at a boundary sample")

    levels = 0
    while True:
        angles = np.arctan2([v[1] for v in values], [v[0] for v in values])
        inc = np.diff(np.concatenate([angles, angles[:1]]))
        inc = (inc + np.pi) % (2 * np.pi) - np.pi
        bad = np.nonzero(np.abs(inc) >= _ANGLE_CAP)[0]
        if len(bad) == 0:
            total = float(np.sum(inc) / (2 * np.pi))
            deg = int(np.round(total))
            if abs(total - deg) > _ROUND_RESIDUAL:
                raise NonConvergent(
                    f"degree.brouwer_degree: winding total {total:.6f} is "
                    f"{abs(total - deg):.3f} from an integer")
            return DegreeResult(deg, min_mag, levels)
        levels += 1
        if levels > max_refinement:
            raise NonConvergent(
                f"degree.brouwer_degree: angle increments still exceed pi/2 "
                f"after {max_refinement} refinement rounds")
        # split every offending segment this round, earliest first
        new_params = []
        insert_at = []
        m = len(params)
        for i in bad:
            a, b = params[i], params[(i + 1) % m]
            new_params.append(domain.boundary_midpoint(a, b))
            insert_at.append(i)
        if domain.kind == "ball":
            new_points = [domain.boundary_point(p) for p in new_params]
        else:
            new_points = new_params
        new_values = list(F(np.array(new_points)))
        nm = np.linalg.norm(np.array(new_values), axis=1)
        if float(np.min(nm)) <= tol:
            raise ZeroOnBoundary(
                f"degree.brouwer_degree: |F| = {float(np.min(nm)):.3e} <= "
                f"{tol:.3e} at an inserted boundary sample")
        min_mag = min(min_mag, float(np.min(nm)))
        # insert back-to-front so earlier positions stay valid
        for j, i in sorted(zip(insert_at, range(len(insert_at))), reverse=True):
            params.insert(j + 1, new_params[i])
            points.insert(j + 1, new_points[i])
            values.insert(j + 1, new_values[i])


def _solid_angle_degree(F, domain, zero_tol, max_refinement):
    subdiv0 = 2
    previous = None
    min_mag_seen = np.inf
    for level in range(subdiv0, subdiv0 + max_refinement + 1):
        mesh = icosphere(level)
        verts = domain.center + domain.radius * mesh.vertices
        faces = mesh.faces if domain.orientation > 0 else mesh.faces[:, ::-1]
        vals = F(verts)
        mags = np.linalg.norm(vals, axis=1)
        max_mag = float(np.max(mags))
        tol = zero_tol if zero_tol is not None else 1e-8 * (1.0 + max_mag)
        min_mag = float(np.min(mags))
        min_mag_seen = min(min_mag_seen, min_mag)
        if min_mag <= tol:
            raise ZeroOnBoundary(
                f"degree.brouwer_degree: |F| = {min_mag:.3e} <= {tol:.3e} "
                "at a boundary vertex")
        unit = vals / mags[:, None]
        u, v, w = unit[faces[:, 0]], unit[faces[:, 1]], unit[faces[:, 2]]
        # signed spherical triangle areas of the image mesh
        numer = np.einsum("ij,ij->i", u, np.cross(v, w))
        denom = (1.0 + np.einsum("ij,ij->i", u, v)
                 + np.einsum("ij,ij->i", v, w)
                 + np.einsum("ij,ij->i", w, u))
        omega = 2.0 * np.arctan2(numer, denom)
        total = float(np.sum(omega) / (4 * np.pi))
        if previous is not None and abs(total - previous) <= _FLUX_AGREE:
            deg = int(np.round(total))
            return DegreeResult(deg, min_mag_seen, level - subdiv0)
        previous = total
    raise NonConvergent(
        "degree.brouwer_degree: solid-angle totals did not stabilize within "
        f"{max_refinement} refinement levels")


def brouwer_degree(F, domain, zero_tol=None, max_refinement=_MAX_REFINE):
    """Degree of ``F`` on ``domain`` with respect to 0.

    ``F`` maps an (n, k) array of points to an (n, k) array of values.
    Raises :class:`ZeroOnBoundary` when |F| dips under ``zero_tol``
    (default 1e-8*(1+max sampled |F|)) and :class:`NonConvergent` when
    refinement does not settle.
    """
    F = _as_batched(F)
    if domain.k == 2:
        return _winding_degree(F, domain, zero_tol, max_refinement)
    if domain.k == 3:
        if domain.kind != "ball":
            raise ValueError("degree.brouwer_degree: level-set domains are "
                             "only supported in the plane")
        return _solid_angle_degree(F, domain, zero_tol, max_refinement)
    raise ValueError("degree.brouwer_degree: only k=2 and k=3 are supported")
