"""Truncated GNS matrix representations and spectral tooling.

The algebra acts by left multiplication on the span of the monomials
U1^m U2^n with |m|, |n| <= N.  On that basis the trace inner product is
exactly orthonormal, so left multiplication matrices, Laplacians, heat
traces and small-time coefficient fits are all plain dense Hermitian
linear algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse

from .nctorus import (AlgebraParams, TorusElement, multiply, star, trace0,
                      _phase)


@dataclass(frozen=True)
class GnsTruncation:
    """Monomial basis box |m|,|n| <= N in row-major (m, n) order."""

    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("truncation N must be >= 1")

    @property
    def side(self) -> int:
        return 2 * self.N + 1

    @property
    def size(self) -> int:
        return self.side ** 2

    def index(self, m: int, n: int) -> int:
        return (m + self.N) * self.side + (n + self.N)

    def inside(self, m: int, n: int) -> bool:
        return abs(m) <= self.N and abs(n) <= self.N

    def indices(self) -> np.ndarray:
        """(size, 2) array of (m, n) per basis slot."""
        r = np.arange(-self.N, self.N + 1)
        mm, nn = np.meshgrid(r, r, indexing="ij")
        return np.stack([mm.ravel(), nn.ravel()], axis=1)

    def interior_mask(self, margin: int) -> np.ndarray:
        """Boolean mask of basis slots with |m|,|n| <= N - margin."""
        idx = self.indices()
        keep = self.N - max(margin, 0)
        return (np.abs(idx[:, 0]) <= keep) & (np.abs(idx[:, 1]) <= keep)

    def cyclic_vector(self) -> np.ndarray:
        v = np.zeros(self.size, dtype=complex)
        v[self.index(0, 0)] = 1.0
        return v


class GnsMatrix:
    """Dense or sparse operator on the truncated GNS basis."""

    def __init__(self, trunc: GnsTruncation, data, leakage: int = 0):
        self.trunc = trunc
        self.data = data
        self.leakage = leakage

    def toarray(self) -> np.ndarray:
        if scipy.sparse.issparse(self.data):
            return self.data.toarray()
        return np.asarray(self.data)

    @property
    def shape(self):
        return self.data.shape

    def hermiticity_residual(self) -> float:
        A = self.toarray()
        return float(np.linalg.norm(A - A.conj().T) / max(1.0, np.linalg.norm(A)))


def represent(a: TorusElement, trunc: GnsTruncation) -> GnsMatrix:
    """Matrix of left multiplication by `a` on the truncated basis.

    Products that leave the box are dropped; the number of dropped
    entries is recorded as `leakage` (boundary columns are inexact).
    """
    side, N = trunc.side, trunc.N
    theta = a.params.theta
    rows, cols, vals = [], [], []
    leakage = 0
    basis = trunc.indices()
    for (p, q), c in a.coeffs.items():
        tm = basis[:, 0] + p
        tn = basis[:, 1] + q
        ok = (np.abs(tm) <= N) & (np.abs(tn) <= N)
        leakage += int(np.size(ok) - np.count_nonzero(ok))
        src = np.nonzero(ok)[0]
        dst = (tm[ok] + N) * side + (tn[ok] + N)
        # (U1^p U2^q)(U1^m U2^n) phase exp(2 pi i theta q m)
        ph = np.exp(2j * np.pi * np.mod(theta * q * basis[ok, 0], 1.0))
        rows.append(dst)
        cols.append(src)
        vals.append(c * ph)
    if rows:
        mat = scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(trunc.size, trunc.size), dtype=complex)
    else:
        mat = scipy.sparse.csr_matrix((trunc.size, trunc.size), dtype=complex)
    return GnsMatrix(trunc, mat, leakage)


def vector_to_element(params: AlgebraParams, trunc: GnsTruncation,
                      vec: np.ndarray, prune: float = 1e-14) -> TorusElement:
    """Read a GNS coefficient vector back as an algebra element."""
    idx = trunc.indices()
    keep = np.abs(vec) > prune
    coeffs = {(int(m), int(n)): complex(v)
              for (m, n), v in zip(idx[keep], vec[keep])}
    return TorusElement(params, coeffs, prune=prune)


def element_to_vector(a: TorusElement, trunc: GnsTruncation) -> np.ndarray:
    v = np.zeros(trunc.size, dtype=complex)
    for (m, n), c in a.coeffs.items():
        if trunc.inside(m, n):
            v[trunc.index(m, n)] = c
    return v


def reconstruct(M: GnsMatrix, params: AlgebraParams,
                prune: float = 1e-14) -> TorusElement:
    """Cyclic-vector readout: apply M to the basis vector of 1."""
    A = M.data
    vec = A @ M.trunc.cyclic_vector()
    return vector_to_element(params, M.trunc, np.asarray(vec).ravel(), prune=prune)


def reconstruct_residual(M: GnsMatrix, elem: TorusElement,
                         probes: Iterable[tuple[int, int]] = ((0, 0), (1, 0), (0, 1), (-1, 1))) -> float:
    """Spot-check that M acts like left multiplication by `elem`.

    Compares M e_w against the vector of elem * U^w for a few interior
    basis monomials w.
    """
    trunc = M.trunc
    A = M.data
    res = 0.0
    for (m, n) in probes:
        if not trunc.inside(m, n):
            continue
        ew = np.zeros(trunc.size, dtype=complex)
        ew[trunc.index(m, n)] = 1.0
        got = np.asarray(A @ ew).ravel()
        want = element_to_vector(
            multiply(elem, TorusElement.monomial(elem.params, m, n)), trunc)
        res = max(res, float(np.linalg.norm(got - want)))
    return res


# -- spectral helpers -------------------------------------------------------

def hermitian_eig(A: np.ndarray):
    w, v = scipy.linalg.eigh(A)
    return w, v


class ElementSpectral:
    """Eigen-data of the left multiplication matrix of a self-adjoint element.

    Provides matrix functions exp(c h), the corresponding algebra elements
    via cyclic readout, and the unitary change of basis used by the modular
    functional calculus.
    """

    def __init__(self, h: TorusElement, trunc: GnsTruncation):
        if not h.is_selfadjoint(tol=1e-10):
            raise ValueError("spectral data requires a self-adjoint element")
        self.h = h
        self.trunc = trunc
        self.params = h.params
        H = represent(h, trunc).toarray()
        H = 0.5 * (H + H.conj().T)
        self.evals, self.evecs = hermitian_eig(H)

    def matrix_function(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        V = self.evecs
        return (V * fn(self.evals)) @ V.conj().T

    def exp_matrix(self, c: float | complex) -> np.ndarray:
        return self.matrix_function(lambda d: np.exp(c * d))

    def exp_element(self, c: float | complex, prune: float = 1e-14) -> TorusElement:
        """Algebra element exp(c*h) via cyclic-vector readout."""
        V = self.evecs
        u = V.conj().T @ self.trunc.cyclic_vector()
        vec = V @ (np.exp(c * self.evals) * u)
        return vector_to_element(self.params, self.trunc, vec, prune=prune)


def laplacian(kind: str, h: TorusElement | None, trunc: GnsTruncation,
              s: float = 1.0, spectral: ElementSpectral | None = None) -> GnsMatrix:
    """Laplacian matrices on the truncated GNS space.

    kind "flat": diagonal multiplier (m + conj(tau) n)(m + tau n).
    kind "conformal": K D K with K = exp(represent(h)/2).
    kind "forms01": Dtau^* K2 Dtau with K2 = exp(represent(h)).
    kind "family_s": exp(s H/2) D exp(s H/2).
    """
    if kind not in ("flat", "conformal", "forms01", "family_s"):
        raise ValueError(f"unknown laplacian kind {kind!r}")
    if kind != "flat" and h is None:
        raise ValueError("h required for non-flat laplacians")
    params = h.params if h is not None else None
    if kind == "flat" and params is None:
        raise ValueError("flat laplacian still needs params via h")
    tau = params.tau
    idx = trunc.indices()
    eta = idx[:, 0] + np.conj(tau) * idx[:, 1]     # eigenvalue of delta_tau
    flat_diag = (eta * np.conj(eta)).real           # (m + conj(tau) n)(m + tau n)
    if kind == "flat":
        return GnsMatrix(trunc, np.diag(flat_diag.astype(complex)))
    spec = spectral or ElementSpectral(h, trunc)
    if kind == "conformal":
        K = spec.exp_matrix(0.5)
        M = K @ (flat_diag[:, None] * K)
    elif kind == "family_s":
        K = spec.exp_matrix(0.5 * s)
        M = K @ (flat_diag[:, None] * K)
    else:  # forms01
        K2 = spec.exp_matrix(1.0)
        D = eta  # diagonal of delta_tau
        M = (np.conj(D)[:, None] * K2) * D[None, :]
    M = 0.5 * (M + M.conj().T)
    return GnsMatrix(trunc, M)


class HeatTrace:
    """Heat traces Tr(a e^{-tL}) from one eigendecomposition of L.

    Traces are taken over the interior block of the basis box (margin
    set by the support radii of the probe and the dilaton), which keeps
    boundary-polluted modes out of the small-t fit.
    """

    def __init__(self, L: GnsMatrix, margin: int = 0):
        self.trunc = L.trunc
        self.margin = margin
        A = L.toarray()
        herm = np.linalg.norm(A - A.conj().T) / max(1.0, np.linalg.norm(A))
        if herm > 1e-10:
            raise ValueError(f"laplacian not Hermitian (residual {herm:.2e})")
        self.evals, self.evecs = hermitian_eig(0.5 * (A + A.conj().T))
        lam_min = self.evals[0]
        lam_max = self.evals[-1]
        if lam_min < -1e-10 * max(1.0, lam_max):
            raise ValueError(f"laplacian not PSD (min eigenvalue {lam_min:.3e})")

    @property
    def lambda_max(self) -> float:
        return float(self.evals[-1])

    def probe_weights(self, a: TorusElement | None) -> np.ndarray:
        """Diagonal of U^H (W a W) U for the interior mask W."""
        mask = self.trunc.interior_mask(self.margin).astype(float)
        U = self.evecs
        if a is None:
            B = U.conj() * mask[:, None]
            return np.einsum("ij,ij->j", B, U).real.astype(complex)
        A = represent(a, self.trunc).data
        M = scipy.sparse.diags(mask) @ A @ scipy.sparse.diags(mask)
        MU = M @ U
        return np.einsum("ij,ij->j", U.conj(), MU)

    def trace(self, a: TorusElement | None, ts: np.ndarray | float) -> np.ndarray | float:
        ts_arr = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts_arr <= 0):
            raise ValueError("heat trace needs t > 0")
        g = self.probe_weights(a)
        lam = np.clip(self.evals, 0.0, None)
        out = np.array([np.sum(g * np.exp(-t * lam)) for t in ts_arr])
        out = out.real if np.allclose(out.imag, 0, atol=1e-9 * (1 + np.abs(out.real).max())) else out
        return out if np.ndim(ts) else out[0]


def heat_trace(L: GnsMatrix, a: TorusElement | None, t: float,
               margin: int = 0) -> float:
    """One-shot convenience wrapper; use HeatTrace for repeated queries."""
    return float(np.real(HeatTrace(L, margin=margin).trace(a, t)))


@dataclass
class HeatFitConfig:
    """Geometric t-grid and model for the small-time coefficient fit.

    The model is sum over `orders` of c_q t^q, default c_{-1}/t + c_0 +
    c_1 t + c_2 t^2; the top column absorbs higher-order contamination
    so a2 = c_0 stays clean (steep spectra benefit from one extra
    order).  t_min must obey the window rule t_min >= 40 / lambda_max
    so that spectrum missing from the truncation cannot bias the trace.
    """

    t_min: float | None = None
    t_max: float | None = None
    points: int = 28
    window_factor: float = 40.0
    span: float = 12.0          # default t_max = span * t_min
    max_cond: float = 1e8
    orders: tuple = (-1, 0, 1, 2)

    def grid(self, lambda_max: float) -> np.ndarray:
        t_lo = self.window_factor / lambda_max
        t_min = self.t_min if self.t_min is not None else t_lo
        if t_min < t_lo * (1 - 1e-12):
            raise ValueError(
                f"window rule violated: t_min={t_min:.3e} < {t_lo:.3e} = "
                f"{self.window_factor}/lambda_max")
        t_max = self.t_max if self.t_max is not None else self.span * t_min
        if t_max <= t_min:
            raise ValueError("t_max must exceed t_min")
        return np.geomspace(t_min, t_max, self.points)


@dataclass
class HeatFit:
    a0: float
    a2: float
    a4: float
    residual: float
    stability: float
    cond: float
    t_grid: np.ndarray = field(repr=False)


def _fit_window(ts: np.ndarray, vals: np.ndarray, max_cond: float,
                orders: tuple):
    # Fit t*Tr = sum_q c_q t^{q+1} by column-scaled least squares.
    y = ts * vals
    cols = np.stack([ts ** (q + 1) for q in orders], axis=1)
    scale = np.linalg.norm(cols, axis=0)
    A = cols / scale
    cond = np.linalg.cond(A)
    if cond > max_cond:
        raise ValueError(f"heat fit ill-conditioned (cond {cond:.2e})")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    coef = coef / scale
    resid = float(np.sqrt(np.mean((cols @ coef - y) ** 2)))
    return coef, resid, cond


def fit_heat_coefficients(ht: HeatTrace, a: TorusElement | None,
                          cfg: HeatFitConfig | None = None) -> HeatFit:
    cfg = cfg or HeatFitConfig()
    orders = tuple(cfg.orders)
    for need in (-1, 0, 1):
        if need not in orders:
            raise ValueError("fit orders must include -1, 0, 1")
    ts = cfg.grid(ht.lambda_max)
    vals = np.real(ht.trace(a, ts))
    coef, resid, cond = _fit_window(ts, vals, cfg.max_cond, orders)
    # stability: drop two grid points from either end and refit
    ca, _, _ = _fit_window(ts[:-2], vals[:-2], cfg.max_cond * 10, orders)
    cb, _, _ = _fit_window(ts[2:], vals[2:], cfg.max_cond * 10, orders)
    i0, i2, i4 = orders.index(-1), orders.index(0), orders.index(1)
    stability = float(abs(ca[i2] - cb[i2]))
    return HeatFit(a0=float(coef[i0]), a2=float(coef[i2]), a4=float(coef[i4]),
                   residual=resid, stability=stability, cond=float(cond),
                   t_grid=ts)


# -- zeta value and KMS ------------------------------------------------------

def kernel_projection_term(h: TorusElement, a: TorusElement,
                           trunc: GnsTruncation,
                           spectral: ElementSpectral | None = None) -> dict:
    """Tr(P a P) for P the kernel projector of the conformal Laplacian.

    Returns both the closed trace ratio phi0(a k^{-2}) / phi0(k^{-2}) and
    the direct eigenvector evaluation on the truncation.
    """
    spec = spectral or ElementSpectral(h, trunc)
    km2 = spec.exp_element(-1.0)           # k^{-2} = exp(-h)
    ratio = trace0(multiply(a, km2)) / trace0(km2)
    L = laplacian("conformal", h, trunc, spectral=spec)
    w, v = hermitian_eig(L.toarray())
    ground = v[:, 0]
    A = represent(a, trunc).data
    direct = complex(np.vdot(ground, A @ ground))
    return {"ratio": complex(ratio), "direct": direct,
            "gap": float(w[1] - w[0]), "ground_energy": float(w[0])}


def zeta_at_zero(h: TorusElement, a: TorusElement, trunc: GnsTruncation,
                 fitted_a2: float,
                 spectral: ElementSpectral | None = None) -> dict:
    """Zeta value at 0: fitted a2 minus the kernel projection term."""
    kp = kernel_projection_term(h, a, trunc, spectral=spectral)
    return {"zeta0": fitted_a2 - kp["ratio"].real, "a2": fitted_a2, **kp}


def kms_check(h: TorusElement, a: TorusElement, b: TorusElement,
              trunc: GnsTruncation,
              spectral: ElementSpectral | None = None) -> float:
    """|phi(ab) - phi(b e^{-h} a e^{h})| for the weight phi = phi0(. e^{-h})."""
    spec = spectral or ElementSpectral(h, trunc)
    em = spec.exp_element(-1.0)
    ep = spec.exp_element(+1.0)
    lhs = trace0(multiply(multiply(a, b), em))
    rhs = trace0(multiply(multiply(multiply(b, em), multiply(a, ep)), em))
    return abs(lhs - rhs)


def modular_flow(h: TorusElement, a: TorusElement, t: float,
                 trunc: GnsTruncation,
                 spectral: ElementSpectral | None = None) -> TorusElement:
    """sigma_t(a) = e^{ith} a e^{-ith} through matrix exponentials."""
    spec = spectral or ElementSpectral(h, trunc)
    V, d = spec.evecs, spec.evals
    u = V.conj().T @ trunc.cyclic_vector()
    vec_right = V @ (np.exp(-1j * t * d) * u)          # e^{-ith} as GNS vector
    A = represent(a, trunc).data
    w = V @ (np.exp(1j * t * d) * (V.conj().T @ (A @ vec_right)))
    return vector_to_element(h.params, trunc, w)


# -- lattice trace formula ---------------------------------------------------

def op_matrix(f: Callable[[int, int], TorusElement], trunc: GnsTruncation) -> np.ndarray:
    """Dense matrix of the operator sending U^{(m,n)} to f(-m,-n) U^{(m,n)}."""
    n = trunc.size
    out = np.zeros((n, n), dtype=complex)
    for m, nn in trunc.indices():
        col = trunc.index(m, nn)
        val = f(-int(m), -int(nn))
        vec = element_to_vector(
            multiply(val, TorusElement.monomial(val.params, int(m), int(nn))), trunc)
        out[:, col] = vec
    return out


def op_trace(f: Callable[[float, float], TorusElement], lattice_radius: int,
             decay_tol: float = 1e-12, integral: bool = True,
             integral_radius: float | None = None,
             integral_points: int = 120) -> dict:
    """Trace of the lattice-sampled multiplier and its integral comparison.

    Sums trace0(f(n)) over the integer lattice box of the given radius,
    estimates the dropped tail from the boundary ring, and (optionally)
    computes the integral of trace0(f(xi)) by tensor Gauss-Legendre
    quadrature for the Poisson-summation comparison.
    """
    M = lattice_radius
    total = 0.0 + 0.0j
    boundary = 0.0
    for m in range(-M, M + 1):
        for n in range(-M, M + 1):
            v = trace0(f(float(m), float(n)))
            total += v
            if max(abs(m), abs(n)) == M:
                boundary += abs(v)
    tail_estimate = 4.0 * boundary  # crude bound on the dropped rings
    out = {"lattice_sum": total, "tail_estimate": tail_estimate,
           "tail_ok": tail_estimate <= decay_tol * max(1.0, abs(total))}
    if integral:
        R = integral_radius if integral_radius is not None else M + 0.5
        gl_nodes, gl_weights = np.polynomial.legendre.leggauss(integral_points)
        nodes = R * gl_nodes
        weights = R * gl_weights
        vals = np.array([[complex(trace0(f(float(xi), float(yj))))
                          for yj in nodes] for xi in nodes])
        integral_val = complex(weights @ vals @ weights)
        out["integral"] = integral_val
        out["difference"] = total - integral_val
    return out
