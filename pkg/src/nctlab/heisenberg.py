"""Discretized Heisenberg equivalence bimodules.

Sections of the bimodule attached to an integer matrix g = (a,b;c,d)
with det 1 and c != 0 live in S(R x Z_c); here they are uniform grid
samples on [-L, L) per cyclic component.  The two commuting module
actions are pointwise phases and translations (irrational translation
amounts are applied as band-limited spectral shifts), the standard
connection is a spectral derivative plus a linear position phase, and
the oscillator Laplacians become dense Hermitian matrices suitable for
spectrum and heat-trace work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Tuple

import numpy as np
import scipy.linalg

from .nctorus import AlgebraParams, TorusElement, multiply, star, trace0


@dataclass(frozen=True)
class HeisenbergParams:
    """Integer matrix (a, b; c, d) with det 1, c != 0, and the base slope."""

    a: int
    b: int
    c: int
    d: int
    theta: float

    def __post_init__(self):
        if self.a * self.d - self.b * self.c != 1:
            raise ValueError("matrix must have determinant 1")
        if self.c == 0:
            raise ValueError("c = 0 gives the trivial bimodule; no module geometry")

    @property
    def theta_prime(self) -> float:
        return (self.a * self.theta + self.b) / (self.c * self.theta + self.d)

    @property
    def rank(self) -> float:
        return self.c * self.theta + self.d

    @property
    def degree(self) -> int:
        return self.c

    @property
    def slope(self) -> float:
        return self.degree / self.rank

    @property
    def components(self) -> int:
        return abs(self.c)

    def dual(self) -> "HeisenbergParams":
        """Parameters of the companion module carrying the opposite actions."""
        return HeisenbergParams(self.d, -self.b, -self.c, self.a, self.theta_prime)


@dataclass(frozen=True)
class ModuleGrid:
    L: float = 12.0
    G: int = 512

    @cached_property
    def ts(self) -> np.ndarray:
        return -self.L + 2.0 * self.L * np.arange(self.G) / self.G

    @cached_property
    def freqs(self) -> np.ndarray:
        return np.fft.fftfreq(self.G, d=2.0 * self.L / self.G) * 2.0 * np.pi

    @property
    def dt(self) -> float:
        return 2.0 * self.L / self.G


class HeisenbergSection:
    """Grid samples of a Schwartz section, shape (components, G)."""

    def __init__(self, params: HeisenbergParams, grid: ModuleGrid,
                 values: np.ndarray):
        values = np.asarray(values, dtype=complex)
        if values.shape != (params.components, grid.G):
            raise ValueError(f"values must have shape "
                             f"({params.components}, {grid.G})")
        self.params = params
        self.grid = grid
        self.values = values

    def copy(self, values) -> "HeisenbergSection":
        return HeisenbergSection(self.params, self.grid, values)

    def __add__(self, other):
        return self.copy(self.values + other.values)

    def __sub__(self, other):
        return self.copy(self.values - other.values)

    def scaled(self, c) -> "HeisenbergSection":
        return self.copy(c * self.values)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.dt))

    def tail_mass(self) -> float:
        """Fraction of squared mass outside [-L/2, L/2]; Schwartz proxy."""
        ts = self.grid.ts
        outside = np.abs(ts) > self.grid.L / 2
        total = np.sum(np.abs(self.values) ** 2)
        if total == 0:
            return 0.0
        return float(np.sum(np.abs(self.values[:, outside]) ** 2) / total)


def gaussian_section(params: HeisenbergParams, grid: ModuleGrid,
                     width: float = 0.7, center: float = 0.0,
                     component_weights=None) -> HeisenbergSection:
    ts = grid.ts
    base = np.exp(-((ts - center) ** 2) / (2.0 * width ** 2))
    w = (np.ones(params.components) if component_weights is None
         else np.asarray(component_weights, dtype=complex))
    return HeisenbergSection(params, grid, np.outer(w, base))


def _translate(grid: ModuleGrid, values: np.ndarray, s: float) -> np.ndarray:
    """Band-limited translation f(t) -> f(t - s) by an FFT phase ramp."""
    ph = np.exp(-1j * grid.freqs * s)
    return np.fft.ifft(np.fft.fft(values, axis=1) * ph[None, :], axis=1)


def act_right(f: HeisenbergSection, gen: str, power: int = 1) -> HeisenbergSection:
    """Right action of U1 or U2 (or their integer powers)."""
    p = f.params
    grid = f.grid
    ts = grid.ts
    vals = f.values
    cc = p.components
    alphas = np.arange(cc)
    if gen == "U1":
        ph = np.exp(2j * np.pi * power * (ts[None, :] - alphas[:, None] * p.d / p.c))
        vals = vals * ph
    elif gen == "U2":
        vals = _translate(grid, vals, power * p.rank / p.c)
        vals = np.roll(vals, power, axis=0)  # alpha -> alpha - power
    else:
        raise ValueError("gen must be 'U1' or 'U2'")
    return f.copy(vals)


def act_left(f: HeisenbergSection, gen: str, power: int = 1) -> HeisenbergSection:
    """Left action of V1 or V2 (or their integer powers)."""
    p = f.params
    grid = f.grid
    ts = grid.ts
    vals = f.values
    cc = p.components
    alphas = np.arange(cc)
    if gen == "V1":
        ph = np.exp(2j * np.pi * power * (ts[None, :] / p.rank - alphas[:, None] / p.c))
        vals = vals * ph
    elif gen == "V2":
        vals = _translate(grid, vals, power * 1.0 / p.c)
        vals = np.roll(vals, power * p.a, axis=0)  # alpha -> alpha - power*a
    else:
        raise ValueError("gen must be 'V1' or 'V2'")
    return f.copy(vals)


def act_right_monomial(f: HeisenbergSection, m: int, n: int) -> HeisenbergSection:
    """f * (U1^m U2^n) following the right-module order."""
    out = f
    if m:
        out = act_right(out, "U1", m)
    if n:
        out = act_right(out, "U2", n)
    return out


def act_left_monomial(f: HeisenbergSection, m: int, n: int) -> HeisenbergSection:
    """(V1^m V2^n) f; the left action of the monomial of the left algebra."""
    out = f
    if n:
        out = act_left(out, "V2", n)
    if m:
        out = act_left(out, "V1", m)
    return out


def act_left_element(k: TorusElement, f: HeisenbergSection) -> HeisenbergSection:
    """Left action of an element of the left algebra, monomial by monomial."""
    acc = np.zeros_like(f.values)
    for (m, n), coeff in k.coeffs.items():
        acc = acc + coeff * act_left_monomial(f, m, n).values
    return f.copy(acc)


def l2_inner(f1: HeisenbergSection, f2: HeisenbergSection) -> complex:
    """Integral of conj(f1) f2, Lebesgue x counting measure, by Riemann sum."""
    return complex(np.sum(np.conj(f1.values) * f2.values) * f1.grid.dt)


def valued_inner(f1: HeisenbergSection, f2: HeisenbergSection, side: str,
                 cutoff: int, tau: complex) -> TorusElement:
    """Algebra-valued inner products, reconstructed coefficientwise.

    side="A_theta": the right-algebra-valued product <f1, f2>_A with
    coefficients <f1, f2 (U^mn)^*>_{L2}; its trace0 is the L2 inner
    product by construction, and the module property over monomials is
    the nontrivial content.  side="A_theta_prime": the left-algebra-
    valued product of (f1, f2), linear in the first slot, normalized
    with 1/|rank|; coefficients <(V^mn) f2, f1>_{L2} / |rank|.  With
    these orientations the compatibility
        prime(f1, f2) acting on f3  =  f1 * <f2, f3>_A
    holds, which pins the relative normalization.
    """
    p = f1.params
    coeffs: Dict[Tuple[int, int], complex] = {}
    if side == "A_theta":
        params = AlgebraParams(theta=p.theta % 1.0, tau=tau)
        theta = p.theta
        for m in range(-cutoff, cutoff + 1):
            for n in range(-cutoff, cutoff + 1):
                # (U^{mn})^* = exp(2 pi i theta m n) U1^{-m} U2^{-n}
                g = act_right_monomial(f2, -m, -n)
                ph = np.exp(2j * np.pi * ((theta * m * n) % 1.0))
                coeffs[(m, n)] = ph * l2_inner(f1, g)
        return TorusElement(params, coeffs, prune=1e-16)
    if side == "A_theta_prime":
        params = AlgebraParams(theta=p.theta_prime % 1.0, tau=tau)
        for m in range(-cutoff, cutoff + 1):
            for n in range(-cutoff, cutoff + 1):
                g = act_left_monomial(f2, m, n)
                coeffs[(m, n)] = l2_inner(g, f1) / abs(p.rank)
        return TorusElement(params, coeffs, prune=1e-16)
    raise ValueError("side must be 'A_theta' or 'A_theta_prime'")


def connection(f: HeisenbergSection, j: int) -> HeisenbergSection:
    """Standard connection: d/dt for j=1, 2 pi i slope t for j=2."""
    if j == 1:
        vals = np.fft.ifft(1j * f.grid.freqs[None, :]
                           * np.fft.fft(f.values, axis=1), axis=1)
        return f.copy(vals)
    if j == 2:
        return f.copy(2j * np.pi * f.params.slope * f.grid.ts[None, :] * f.values)
    raise ValueError("j must be 1 or 2")


def j_transpose(f: HeisenbergSection, resample_tol: float = 1e-8
                ) -> HeisenbergSection:
    """Canonical conjugate-linear transposition to the companion module.

    (Jf)(x, alpha) = conj(f(rank * x, -d^{-1} alpha)); the dilation is a
    band-limited resample of the trigonometric interpolant.
    """
    p = f.params
    if math.gcd(p.d, p.components) != 1:
        raise ValueError("d must be invertible modulo |c|")
    grid = f.grid
    rk = p.rank
    cc = p.components
    dinv = pow(p.d, -1, cc) if cc > 1 else 0
    # trig interpolant of each component evaluated at rank * ts; the
    # phase references the grid origin at -L.  Points falling outside
    # the periodic cell would wrap, so they are zeroed instead (the
    # sections are Schwartz; any mass out there shows up in tail_mass).
    F = np.fft.fft(f.values, axis=1) / grid.G
    ys = rk * grid.ts + grid.L
    phase = np.exp(1j * np.outer(ys, grid.freqs))       # (G, G)
    resampled = (phase @ F.T).T                          # (cc, G)
    resampled[:, np.abs(rk * grid.ts) > grid.L] = 0.0
    out = np.empty_like(f.values)
    for alpha in range(cc):
        src = (-dinv * alpha) % cc if cc > 1 else 0
        out[alpha] = np.conj(resampled[src])
    dual = p.dual()
    return HeisenbergSection(dual, grid, out)


# -- dense operators -----------------------------------------------------------

def derivative_matrix(grid: ModuleGrid) -> np.ndarray:
    W = scipy.linalg.dft(grid.G)
    Winv = W.conj().T / grid.G
    return Winv @ (1j * grid.freqs[:, None] * W)


def translation_matrix(grid: ModuleGrid, s: float) -> np.ndarray:
    W = scipy.linalg.dft(grid.G)
    Winv = W.conj().T / grid.G
    return Winv @ (np.exp(-1j * grid.freqs * s)[:, None] * W)


def left_action_matrix(params: HeisenbergParams, grid: ModuleGrid,
                       k: TorusElement, prune: float = 1e-13) -> np.ndarray:
    """Dense matrix of the left action of an element of the left algebra."""
    cc = params.components
    G = grid.G
    n_dim = cc * G
    ts = grid.ts
    alphas = np.arange(cc)
    out = np.zeros((n_dim, n_dim), dtype=complex)
    trans_cache: Dict[int, np.ndarray] = {}
    for (m, n), coeff in k.coeffs.items():
        if abs(coeff) <= prune:
            continue
        T = trans_cache.get(n)
        if T is None:
            T = translation_matrix(grid, n * 1.0 / params.c) if n else np.eye(G)
            trans_cache[n] = T
        # V1^m diag phase, per component
        ph = np.exp(2j * np.pi * m * (ts[None, :] / params.rank
                                      - alphas[:, None] / params.c))  # (cc, G)
        for alpha in range(cc):
            src = (alpha - n * params.a) % cc
            blk = coeff * (ph[alpha][:, None] * T)
            out[alpha * G:(alpha + 1) * G, src * G:(src + 1) * G] += blk
    return out


def probe_action_matrix(params: HeisenbergParams, grid: ModuleGrid,
                        a: TorusElement) -> np.ndarray:
    return left_action_matrix(params, grid, a)


@dataclass
class OscillatorOperator:
    params: HeisenbergParams
    grid: ModuleGrid
    matrix: np.ndarray          # dense Hermitian
    dbar: np.ndarray            # the holomorphic half
    conformal: bool
    tau: complex = 1j
    rank_scaled: bool = True


def oscillator_laplacian(params: HeisenbergParams, grid: ModuleGrid,
                         tau: complex, k2: TorusElement | None = None,
                         ordering: str = "ddbar_star",
                         rank_scaled: bool = True) -> OscillatorOperator:
    """Dense Laplacian of the coupled Dolbeault operator on the module.

    ordering "dbar_star_d" gives dstar d (spectrum starting at 0 only if
    the holomorphic half has kernel); "ddbar_star" gives d dstar, the
    sections Laplacian used for the curvature checks, multiplied by
    rank^2 and conjugated by the left action of k when k2 is given.
    """
    cc = params.components
    G = grid.G
    D = derivative_matrix(grid)
    D_full = np.kron(np.eye(cc), D)
    T_full = np.kron(np.eye(cc), np.diag(2j * np.pi * params.slope * grid.ts))
    A = D_full + np.conj(tau) * T_full          # matrix of connection dbar
    if ordering == "dbar_star_d":
        L = A.conj().T @ A
    elif ordering == "ddbar_star":
        L = A @ A.conj().T
    else:
        raise ValueError("ordering must be 'dbar_star_d' or 'ddbar_star'")
    if rank_scaled:
        L = params.rank ** 2 * L
    conformal = False
    if k2 is not None:
        spec_w, spec_v = np.linalg.eigh(_hermitize(left_action_matrix(params, grid, k2)))
        if spec_w[0] <= 0:
            raise ValueError(f"k2 not positive on the module (min {spec_w[0]:.2e})")
        K = (spec_v * np.sqrt(spec_w)) @ spec_v.conj().T    # left action of k
        L = K @ L @ K
        conformal = True
    return OscillatorOperator(params, grid, _hermitize(L), A, conformal,
                              tau=tau, rank_scaled=rank_scaled)


def _hermitize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


def oscillator_ladder(params: HeisenbergParams, tau: complex) -> dict:
    """Analytic spectrum data of the flat sections Laplacian.

    The commutator of the holomorphic halves is 4 pi slope Im(tau), so
    the rank-scaled Laplacian d dstar has an arithmetic ladder with the
    spacing below; the kernel is |c|-dimensional when the ladder rises.
    """
    s = 4.0 * math.pi * params.slope * tau.imag
    spacing = params.rank ** 2 * abs(s)
    has_kernel = s < 0  # ddbar_star annihilates the Gaussian when slope < 0
    return {"spacing": spacing, "kernel_dim": params.components if has_kernel else 0,
            "commutator": s}


def oscillator_1d_oracle(mu: float, tau: complex, nlow: int = 10,
                         L: float = 14.0, G: int = 6000) -> np.ndarray:
    """Independent 1D discretization of the scalar oscillator.

    Fourth-order finite differences for -d^2/dt^2 + 4 pi^2 mu^2 |tau|^2 t^2
    - 4 pi i mu Re(tau) t d/dt - 2 pi i mu conj(tau), assembled directly
    in Hermitian banded form (bandwidth 2) and solved with the banded
    eigensolver.  Fully independent of the spectral module machinery.
    """
    ts = np.linspace(-L, L, G)
    hstep = ts[1] - ts[0]
    c = -4j * np.pi * mu * tau.real
    # band rows: [super2, super1, diag] for eig_banded(lower=False)
    diag = (30.0 / (12.0 * hstep ** 2)
            + 4.0 * np.pi ** 2 * mu ** 2 * abs(tau) ** 2 * ts ** 2
            - 2.0 * np.pi * mu * tau.imag)  # Re(-2 pi i mu conj(tau))
    # first derivative, fourth order: (8 f_{j+1} - 8 f_{j-1} - f_{j+2} + f_{j-2})/(12h)
    # symmetrized t d/dt: entries (t_j + t_k)/2 times the d1 stencil
    mid1 = 0.5 * (ts[:-1] + ts[1:])
    mid2 = 0.5 * (ts[:-2] + ts[2:])
    super1 = (-16.0 / (12.0 * hstep ** 2)) + c * mid1 * (8.0 / (12.0 * hstep))
    super2 = (1.0 / (12.0 * hstep ** 2)) + c * mid2 * (-1.0 / (12.0 * hstep))
    band = np.zeros((3, G), dtype=complex)
    band[0, 2:] = super2
    band[1, 1:] = super1
    band[2, :] = diag
    w = scipy.linalg.eig_banded(band, lower=False, eigvals_only=True,
                                select="i", select_range=(0, nlow - 1))
    return w


# -- heat fit on the module ----------------------------------------------------

class ModuleHeatTrace:
    """Spectral heat traces of a dense module Laplacian with a level cutoff.

    The discretized spectrum is only trusted below lambda_cut (grid
    levels above start diverging from the continuum operator); both the
    trace sum and the fit window are driven by that cutoff.
    """

    def __init__(self, op: OscillatorOperator, lambda_cut: float | None = None):
        self.op = op
        w, v = scipy.linalg.eigh(op.matrix)
        self.evals, self.evecs = w, v
        if lambda_cut is None:
            # grid levels track the continuum until the eigenfunction hits
            # either the potential at the edge or the Nyquist momentum;
            # levels admitted above that bound are exponentially muted by
            # the window rule, so a factor ~1.5 of the bound is safe
            p, g = op.params, op.grid
            scale = p.rank ** 2 if op.rank_scaled else 1.0
            e_pos = (2.0 * np.pi * abs(p.slope) * abs(op.tau) * g.L) ** 2
            e_mom = (np.pi * g.G / (2.0 * g.L)) ** 2
            lambda_cut = 1.5 * scale * min(e_pos, e_mom)
        self.lambda_cut = float(min(lambda_cut, self.evals[-1]))
        self.keep = self.evals <= self.lambda_cut

    @property
    def lambda_max(self) -> float:
        return self.lambda_cut

    def probe_weights(self, A: np.ndarray | None) -> np.ndarray:
        U = self.evecs[:, self.keep]
        if A is None:
            return np.ones(U.shape[1], dtype=complex)
        return np.einsum("ij,ij->j", U.conj(), A @ U)

    def trace(self, A: np.ndarray | None, ts) -> np.ndarray | float:
        ts_arr = np.atleast_1d(np.asarray(ts, dtype=float))
        g = self.probe_weights(A)
        lam = np.clip(self.evals[self.keep], 0.0, None)
        out = np.array([np.sum(g * np.exp(-t * lam)) for t in ts_arr]).real
        return out if np.ndim(ts) else float(out[0])


class _ProbeAdapter:
    """Duck-type bridge so the gns heat fit runs on module traces."""

    def __init__(self, mht: ModuleHeatTrace, A: np.ndarray | None):
        self._mht = mht
        self._A = A

    @property
    def lambda_max(self) -> float:
        return self._mht.lambda_max

    def trace(self, _unused, ts):
        return self._mht.trace(self._A, ts)


MODULE_FIT_ORDERS = (-1, 0, 1, 2, 3)


def module_heat_fit(mht: ModuleHeatTrace, probe_matrix: np.ndarray | None,
                    cfg=None):
    """Heat-coefficient fit on a module Laplacian spectrum."""
    from .gns import HeatFitConfig, fit_heat_coefficients
    cfg = cfg or HeatFitConfig(span=4.0, points=24, orders=MODULE_FIT_ORDERS)
    return fit_heat_coefficients(_ProbeAdapter(mht, probe_matrix), None, cfg)


def morita_curvature_check(h: TorusElement, gp: HeisenbergParams, tau: complex,
                           grid: ModuleGrid, probes: Dict[str, TorusElement],
                           density: TorusElement, n_dilaton: int = 8,
                           conf_scale: float = 1.0, flat_scale: float = 1.0,
                           cfg=None) -> dict:
    """Compare module heat coefficients with the curvature-density prediction.

    Works on the companion module of gp, whose left algebra contains the
    dilaton.  The flat coefficient is predicted by -degree/2 per unit
    trace; the conformal change is predicted by the density of the
    plain conformal Laplacian divided by the module rank:

        a2(a, conformal) - a2(a, flat) ~ conf_scale / rank * trace0(a K)

    with K the density in the first-convention normalization.  The two
    dimensionless scales default to 1 (the calibrated values).
    """
    dp = gp.dual()
    from .gns import ElementSpectral, GnsTruncation
    spec = ElementSpectral(h, GnsTruncation(n_dilaton))
    k2 = spec.exp_element(1.0)
    k2 = TorusElement(h.params, {k: v for k, v in k2.coeffs.items()
                                 if abs(v) > 1e-12})
    op_flat = oscillator_laplacian(dp, grid, tau, ordering="ddbar_star")
    op_conf = oscillator_laplacian(dp, grid, tau, k2=k2, ordering="ddbar_star")
    mf, mc = ModuleHeatTrace(op_flat), ModuleHeatTrace(op_conf)
    out = {"module": {"rank": dp.rank, "degree": dp.degree,
                      "slope": dp.slope, "components": dp.components},
           "lambda_cut": mf.lambda_cut, "probes": {}}
    raw = {}
    for nm, a in probes.items():
        A = probe_action_matrix(dp, grid, a)
        ff = module_heat_fit(mf, A, cfg)
        fc = module_heat_fit(mc, A, cfg)
        delta = fc.a2 - ff.a2
        tr_a = trace0(a).real
        pred_flat = -flat_scale * dp.degree / 2.0 * tr_a
        pred_delta = conf_scale / dp.rank * trace0(multiply(a, density)).real
        raw[nm] = (ff.a2, fc.a2, delta, pred_flat, pred_delta)
    # deviations of near-zero predictions are judged against the family scale
    family = max((abs(v[4]) for v in raw.values()), default=1.0)
    family = max(family, 1e-12)
    for nm, (flat_a2, conf_a2, delta, pred_flat, pred_delta) in raw.items():
        out["probes"][nm] = {
            "flat_a2": flat_a2, "conf_a2": conf_a2, "delta_a2": delta,
            "pred_flat": pred_flat, "pred_delta": pred_delta,
            "flat_dev": (abs(flat_a2 - pred_flat)
                         / max(abs(pred_flat), 0.02 * max(abs(pred_flat), 1.0))),
            "conf_dev": abs(delta - pred_delta) / max(abs(pred_delta), family),
        }
    return out
