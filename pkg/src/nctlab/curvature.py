"""Curvature density, Gauss-Bonnet check, and the determinant functional.

Assembles the second-heat-coefficient density of the conformal
Laplacian from the kernel calculus, the scale-invariant determinant
functional F with its gradient, and the closed log-determinant formula.
Two prefactor conventions for the density are supported; the map
between them and the absolute heat-trace normalization is fixed once by
calibration (see conventions.py) rather than assumed.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nctorus import (TorusElement, conformal_laplacian_of, dirichlet_pairs,
                      multiply, star, trace0)
from .modfunc import (ModularCalcContext, eval_H0, eval_Htilde0, eval_K0,
                      eval_Kplus, eval_Ktilde0, mod_calc_1, mod_calc_2)

CONVENTIONS = ("CM2014", "LM2015")


def _prefactor(convention: str, im_tau: float) -> float:
    if convention == "CM2014":
        return -math.pi / (2.0 * im_tau)
    if convention == "LM2015":
        return 1.0 / (4.0 * math.pi * im_tau)
    raise ValueError(f"unknown prefactor convention {convention!r}")


@dataclass
class CurvatureReport:
    density: TorusElement
    gauss_bonnet_residual: float
    prefactor_convention: str
    trace: complex
    selfadjoint_residual: float


@dataclass
class Functional:
    value: float
    gradient: TorusElement


def _context(h: TorusElement, N: int,
             ctx: Optional[ModularCalcContext]) -> ModularCalcContext:
    if ctx is not None:
        if ctx.trunc.N != N or ctx.h is not h:
            raise ValueError("supplied context does not match h, N")
        return ctx
    return ModularCalcContext(h, N)


def curvature_density_raw(h: TorusElement, N: int,
                          ctx: Optional[ModularCalcContext] = None) -> TorusElement:
    """Unnormalized density K0(grad)(lap h) + 1/2 H0(grad1, grad2)(dirichlet h)."""
    ctx = _context(h, N, ctx)
    lap_h = conformal_laplacian_of(h)
    part1 = mod_calc_1(eval_K0, ctx, lap_h)
    part2 = mod_calc_2(eval_H0, ctx, dirichlet_pairs(h))
    return part1 + 0.5 * part2


def modular_curvature(h: TorusElement, N: int,
                      convention: str = "CM2014",
                      ctx: Optional[ModularCalcContext] = None) -> CurvatureReport:
    """Curvature density of the conformal Laplacian with trace diagnostics.

    The total trace of the density vanishes identically (the analogue of
    the Gauss-Bonnet theorem); the reported residual is purely numerical
    truncation error and shrinks as N grows.
    """
    if not h.is_selfadjoint(tol=1e-10):
        raise ValueError("dilaton must be self-adjoint")
    ctx = _context(h, N, ctx)
    density = _prefactor(convention, h.params.im_tau) * curvature_density_raw(h, N, ctx)
    tr = trace0(density)
    sa = (density - star(density)).norm_sup()
    return CurvatureReport(density=density, gauss_bonnet_residual=abs(tr),
                           prefactor_convention=convention, trace=tr,
                           selfadjoint_residual=sa)


def heisenberg_curvature_density(h: TorusElement, module_slope: float, N: int,
                                 ctx: Optional[ModularCalcContext] = None) -> TorusElement:
    """Density for the twisted module Laplacian: modular part plus slope term.

    Uses the second prefactor convention; the constant term is the slope
    of the auxiliary bimodule times the unit.
    """
    if not h.is_selfadjoint(tol=1e-10):
        raise ValueError("dilaton must be self-adjoint")
    ctx = _context(h, N, ctx)
    dens = _prefactor("LM2015", h.params.im_tau) * curvature_density_raw(h, N, ctx)
    return dens + TorusElement.monomial(h.params, 0, 0, module_slope)


def dedekind_eta(tau: complex) -> complex:
    """q-product eta(tau) = e^{pi i tau/12} prod (1 - q^n), Im tau > 0."""
    if tau.imag <= 0:
        raise ValueError("eta requires Im(tau) > 0")
    q = cmath.exp(2j * math.pi * tau)
    out = cmath.exp(1j * math.pi * tau / 12.0)
    qn = 1.0 + 0.0j
    for _ in range(100000):
        qn *= q
        if abs(qn) < 1e-17:
            break
        out *= (1.0 - qn)
    return out


def flat_log_det(tau: complex) -> float:
    """log(4 pi^2 |eta(tau)|^4), the flat-case log-determinant."""
    return math.log(4.0 * math.pi ** 2 * abs(dedekind_eta(tau)) ** 4)


def _anomaly_quadratic_term(h: TorusElement, ctx: ModularCalcContext) -> float:
    """trace0 of the first-slot anomaly kernel applied to the Dirichlet square."""
    out = mod_calc_2(eval_Kplus, ctx, dirichlet_pairs(h), first_slot_only=True)
    return float(trace0(out).real)


def F_value(h: TorusElement, N: int,
            ctx: Optional[ModularCalcContext] = None) -> float:
    """Scale-invariant determinant functional.

    The quadratic term enters with the sign that makes the functional
    scale invariant, extremal only at scalar dilatons, and consistent
    with its own gradient; the first-slot anomaly term applied to the
    Dirichlet square is nonpositive (derivations of self-adjoint
    elements are anti-self-adjoint), so the minus sign below makes the
    correction nonnegative.
    """
    if not h.is_selfadjoint(tol=1e-10):
        raise ValueError("dilaton must be self-adjoint")
    ctx = _context(h, N, ctx)
    im = h.params.im_tau
    return (-flat_log_det(h.params.tau)
            - math.pi / (4.0 * im) * _anomaly_quadratic_term(h, ctx))


def grad_F(h: TorusElement, N: int,
           ctx: Optional[ModularCalcContext] = None) -> TorusElement:
    """Gradient of F with respect to the trace pairing; the Gaussian curvature.

    The bivariate term carries the same 1/2 as the curvature density;
    with it the pairing trace0(a * grad_F(h)) reproduces central finite
    differences of F to rounding-level accuracy.
    """
    if not h.is_selfadjoint(tol=1e-10):
        raise ValueError("dilaton must be self-adjoint")
    ctx = _context(h, N, ctx)
    im = h.params.im_tau
    lap_h = conformal_laplacian_of(h)
    part1 = mod_calc_1(eval_Ktilde0, ctx, lap_h)
    part2 = mod_calc_2(eval_Htilde0, ctx, dirichlet_pairs(h))
    return (math.pi / (4.0 * im)) * (part1 + 0.5 * part2)


def F_functional(h: TorusElement, N: int,
                 ctx: Optional[ModularCalcContext] = None) -> Functional:
    ctx = _context(h, N, ctx)
    return Functional(value=F_value(h, N, ctx), gradient=grad_F(h, N, ctx))


def polyakov_log_det(h: TorusElement, N: int,
                     ctx: Optional[ModularCalcContext] = None) -> float:
    """Closed formula for the log-determinant of the conformal Laplacian.

    log Det = flat part + log of the conformal weight of 1 minus the
    anomaly quadratic term; satisfies F(h) = -log Det + log weight(1)
    exactly by construction of both sides.
    """
    if not h.is_selfadjoint(tol=1e-10):
        raise ValueError("dilaton must be self-adjoint")
    ctx = _context(h, N, ctx)
    im = h.params.im_tau
    weight_one = trace0(ctx.spectral.exp_element(-1.0)).real  # phi(1) = trace0(e^{-h})
    return (flat_log_det(h.params.tau) + math.log(weight_one)
            + math.pi / (4.0 * im) * _anomaly_quadratic_term(h, ctx))


def weight_of_one(h: TorusElement, N: int,
                  ctx: Optional[ModularCalcContext] = None) -> float:
    ctx = _context(h, N, ctx)
    return float(trace0(ctx.spectral.exp_element(-1.0)).real)
