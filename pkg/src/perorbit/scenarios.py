"""Built-in example systems with closed-form cross-validation data.

``paper_example`` is a planar circulation field whose unit circle is
flow-invariant, coupled to a scalar fast variable driven by ||x||; its
variational matrix on the circle has the closed form K(t) K(tau)^-1 exposed
by :func:`closed_form_Y`.  ``paper_example_g0`` is the same system with the
time-dependent interior kick switched off (beta = 0), which makes the origin
an equilibrium of the full system.  ``hale`` is the classical second-order
resonance reduction (pure rotation plus a small forcing), whose boundary
displacement factors through the rotation matrix applied to the forcing
integral :func:`hale_H`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from . import dsl
from .degree import DomainSpec
from .system import SystemSpec

__all__ = ["Scenario", "SCENARIOS", "build_scenario", "closed_form_Y",
           "closed_form_K", "hale_H"]


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    default_params: dict
    build: Callable[[dict], tuple]
    facts: dict


def _build_paper_example(params):
    a = params.get("a", 1.0)
    beta = params.get("beta", 0.5)
    if a <= 0:
        raise ValueError("scenarios.build_scenario: parameter 'a' must be positive")
    system = SystemSpec.from_strings(
        k=2, m=1, T=2 * np.pi,
        phi=["(1 + sin(t)/(2*(1 + y1^2))) * x2",
             "-(1 + sin(t)/(2*(1 + y1^2))) * x1"],
        psi1=["beta*sin(t)*(1 - x1^2 - x2^2)^2 + x2 + x1*(x1^2 + x2^2 - 1)",
              "beta*cos(t)*(1 - x1^2 - x2^2)^2 - x1 + x2*(x1^2 + x2^2 - 1)"],
        psi2=["norm(x1, x2)"],
        A=[[a]],
        parameters={"a": a, "beta": beta},
    )
    return system, DomainSpec.ball([0.0, 0.0], 1.0)


def _build_paper_example_g0(params):
    params = dict(params)
    params["beta"] = 0.0
    return _build_paper_example(params)


def _build_hale(params):
    a0 = params.get("a0", 10.0 / 3.0)
    theta0 = params.get("theta0", np.pi / 2.0)
    radius = params.get("radius", 0.5)
    # slow field is a pure rotation; the forcing enters through the second
    # component composed as g(t, -x1, x2) with g(t, u, v) = sin t - 0.3 u
    system = SystemSpec.from_strings(
        k=2, m=0, T=2 * np.pi,
        phi=["0", "sin(t) + 0.3*x1"],
        psi1=["-x2", "x1"],
        psi2=[],
        A=np.zeros((0, 0)),
        parameters={},
    )
    center = np.array([-a0 * np.cos(theta0), a0 * np.sin(theta0)])
    return system, DomainSpec.ball(center, radius)


def _hale_forcing():
    # g(t, u, v) = sin t - 0.3 u, expressed over the slot names (t, x1, x2)
    return dsl.parse("sin(t) - 0.3*x1", dsl.Signature(k=2, m=0))


SCENARIOS = {
    "paper_example": Scenario(
        name="paper_example",
        description="planar circulation with invariant unit circle, scalar "
                    "fast variable y' = ||x|| - a y; params a > 0, beta",
        default_params={"a": 1.0, "beta": 0.5},
        build=_build_paper_example,
        facts={"expected_degree": 1,
               "boundary_displacement_tangent": 2 * np.pi,
               "y_sup_ideal": "1/a"},
    ),
    "paper_example_g0": Scenario(
        name="paper_example_g0",
        description="paper_example with beta = 0; the origin is an "
                    "equilibrium of the full system",
        default_params={"a": 1.0},
        build=_build_paper_example_g0,
        facts={"expected_degree": 1, "trivial_orbit": (0.0, 0.0, 0.0)},
    ),
    "hale": Scenario(
        name="hale",
        description="pure rotation with small forcing (no fast variable); "
                    "boundary displacement equals Rot(theta) H(a, theta)",
        default_params={"a0": 10.0 / 3.0, "theta0": np.pi / 2.0, "radius": 0.5},
        build=_build_hale,
        facts={"forcing": _hale_forcing},
    ),
}


def build_scenario(name, params=None):
    """Instantiate a scenario by name; returns (SystemSpec, DomainSpec)."""
    if name not in SCENARIOS:
        raise ValueError(f"scenarios.build_scenario: unknown scenario '{name}'; "
                         f"known: {sorted(SCENARIOS)}")
    merged = dict(SCENARIOS[name].default_params)
    merged.update(params or {})
    return SCENARIOS[name].build(merged)


def closed_form_K(t, theta):
    """The 2x2 fundamental-matrix factor on the invariant circle."""
    c, s = np.cos(t + theta), np.sin(t + theta)
    e = np.exp(2.0 * t)
    return np.array([[c, e * s], [-s, e * c]])


def closed_form_Y(t, tau, theta):
    """Variational matrix K(t) K(tau)^-1 along the circle of paper_example."""
    return closed_form_K(t, theta) @ np.linalg.inv(closed_form_K(tau, theta))


def hale_H(a, theta, g_h, quad_tol=1e-11):
    """The forcing integral of the classical reduction.

    H(a, theta) = int_0^{2 pi} (sin tau, cos tau) * f(tau + theta,
    a cos tau, -a sin tau) dtau, with ``g_h`` (an expression over t, x1, x2)
    in the role of f.  Adaptive quadrature per component.
    """
    def f(tau):
        env = {"t": tau + theta, "x1": a * np.cos(tau), "x2": -a * np.sin(tau)}
        return dsl.eval_expr(g_h, env)

    h1, _ = quad(lambda tau: np.sin(tau) * f(tau), 0.0, 2 * np.pi,
                 epsabs=quad_tol, epsrel=quad_tol, limit=200)
    h2, _ = quad(lambda tau: np.cos(tau) * f(tau), 0.0, 2 * np.pi,
                 epsabs=quad_tol, epsrel=quad_tol, limit=200)
    return np.array([h1, h2])
