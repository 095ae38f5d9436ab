"""Curvature kernels and the modular functional calculus.

The univariate kernels here are the entire functions that weight the
second heat coefficient of the conformal Laplacian; the bivariate one
acts on products through a two-slot functional calculus.  Closed forms
are used away from their removable singularities, Bernoulli-type series
and divided differences take over near them, and the two branches are
cross-checked at the seams.

The functional calculus f(grad)(x) with grad = -ad(h) is evaluated in
the eigenbasis of the left multiplication matrix of h: if d_i are its
eigenvalues and X~ the transformed matrix of x, the result has entries
f(d_j - d_i) X~_ij and is pulled back to an algebra element through the
cyclic vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache, wraps
from typing import Callable, Sequence

import numpy as np

from .nctorus import TorusElement
from .gns import ElementSpectral, GnsTruncation, represent, vector_to_element

SERIES_RADIUS = 0.1      # univariate closed-form/series switchover
H0_LINE_BOX = 0.2        # distance to a singular line below which DD is used
DD_TAYLOR_EPS = 0.01     # node separation below which the DD uses Taylor form


def _vectorized1(fn):
    @wraps(fn)
    def wrapper(s):
        arr = np.asarray(s, dtype=float)
        out = fn(np.atleast_1d(arr))
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)
    return wrapper


def _vectorized2(fn):
    @wraps(fn)
    def wrapper(s, t):
        sa = np.asarray(s, dtype=float)
        ta = np.asarray(t, dtype=float)
        sb, tb = np.broadcast_arrays(sa, ta)
        shape = sb.shape
        out = fn(np.atleast_1d(sb).ravel(), np.atleast_1d(tb).ravel())
        return float(out[0]) if shape == () else out.reshape(shape)
    return wrapper


# -- Bernoulli numbers and series coefficients -------------------------------

@lru_cache(maxsize=None)
def bernoulli_numbers(count: int) -> tuple[Fraction, ...]:
    """B_0 .. B_{count-1} from the defining recurrence, exact rationals."""
    out = [Fraction(1)]
    for m in range(1, count):
        acc = Fraction(0)
        for k in range(m):
            acc += Fraction(math.comb(m + 1, k)) * out[k]
        out.append(-acc / (m + 1))
    return tuple(out)


@lru_cache(maxsize=None)
def _ktilde_series() -> np.ndarray:
    """Coefficients c_k with Ktilde0(s) = sum_k c_k s^{2k}, k = 0..11.

    c_k = 8 B_{2k+2} / (2k+2)!; convergence radius 2 pi, so 12 terms are
    far below double rounding inside |s| < 0.5.
    """
    B = bernoulli_numbers(26)
    return np.array([float(8 * B[2 * k + 2] / Fraction(math.factorial(2 * k + 2)))
                     for k in range(12)])


def _poly_even(s: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    s2 = np.square(s)
    out = np.zeros_like(s2)
    for c in coeffs[::-1]:
        out = out * s2 + c
    return out


# -- univariate kernels -------------------------------------------------------

@_vectorized1
def eval_Ktilde0(s):
    """Rescaled curvature kernel 4(s coth(s/2) - 2)/s^2; value 2/3 at 0."""
    small = np.abs(s) < SERIES_RADIUS
    out = np.empty_like(s)
    out[small] = _poly_even(s[small], _ktilde_series())
    big = ~small
    sb = s[big]
    out[big] = 4.0 * (sb / np.tanh(0.5 * sb) - 2.0) / sb ** 2
    return out


@_vectorized1
def eval_Kplus(s):
    """Nonnegative anomaly kernel 2 coth(s/2)/s - 4/s^2; value 1/3 at 0.

    The closed form is fixed by requiring an even, nonnegative function
    decaying at infinity; it coincides with eval_Ktilde0 / 2.
    """
    small = np.abs(s) < SERIES_RADIUS
    out = np.empty_like(s)
    out[small] = 0.5 * _poly_even(s[small], _ktilde_series())
    big = ~small
    sb = s[big]
    out[big] = 2.0 / (sb * np.tanh(0.5 * sb)) - 4.0 / sb ** 2
    return out


def _s_over_4sinh_half(s: np.ndarray) -> np.ndarray:
    # s / (4 sinh(s/2)): stable everywhere, limit 1/2 at 0; returns 0 once
    # sinh overflows (|s| > ~1400), matching the decay of the kernels.
    out = np.full_like(s, 0.5)
    nz = s != 0
    with np.errstate(over="ignore"):
        sh = np.sinh(0.5 * s[nz])
    vals = np.zeros_like(sh)
    good = np.isfinite(sh)
    vals[good] = s[nz][good] / (4.0 * sh[good])
    out[nz] = vals
    return out


@_vectorized1
def eval_K0(s):
    """Curvature kernel (s coth(s/2) - 2)/(s sinh(s/2)); value 1/3 at 0."""
    small = np.abs(s) < SERIES_RADIUS
    kt = np.empty_like(s)
    kt[small] = _poly_even(s[small], _ktilde_series())
    big = ~small
    sb = s[big]
    kt[big] = 4.0 * (sb / np.tanh(0.5 * sb) - 2.0) / sb ** 2
    return kt * _s_over_4sinh_half(s)


# -- divided differences of Ktilde0 ------------------------------------------

@_vectorized1
def ktilde0_deriv1(s):
    """First derivative of eval_Ktilde0 (odd function)."""
    out = np.empty_like(s)
    small = np.abs(s) < 0.5
    if np.any(small):
        c = _ktilde_series()
        s2 = np.square(s[small])
        acc = np.zeros_like(s2)
        for k in range(len(c) - 1, 0, -1):
            acc = acc * s2 + 2 * k * c[k]
        out[small] = acc * s[small]
    mid = (~small) & (np.abs(s) <= 60.0)
    if np.any(mid):
        sm = s[mid]
        ch = np.cosh(sm)
        out[mid] = -(4 * sm ** 2 + 4 * sm * np.sinh(sm) - 16 * ch + 16) / (
            sm ** 3 * (ch - 1.0))
    far = np.abs(s) > 60.0
    if np.any(far):
        sf = s[far]
        out[far] = -4.0 / sf ** 2 + 16.0 / sf ** 3
    return out


@_vectorized1
def ktilde0_deriv3(s):
    """Third derivative of eval_Ktilde0 (odd function)."""
    out = np.empty_like(s)
    small = np.abs(s) < 0.5
    if np.any(small):
        c = _ktilde_series()
        s2 = np.square(s[small])
        acc = np.zeros_like(s2)
        for k in range(len(c) - 1, 1, -1):
            acc = acc * s2 + 2 * k * (2 * k - 1) * (2 * k - 2) * c[k]
        out[small] = acc * s[small]
    mid = (~small) & (np.abs(s) <= 60.0)
    if np.any(mid):
        sm = s[mid]
        ch = np.cosh(sm)
        sh = np.sinh(sm)
        cm1 = ch - 1.0
        out[mid] = -(4 * sm ** 4 / cm1 + 12 * sm ** 4 / cm1 ** 2
                     + 12 * sm ** 3 * sh / cm1 ** 2 + 24 * sm ** 2 / cm1
                     + 24 * sm / np.tanh(0.5 * sm) - 192.0) / sm ** 5
    far = np.abs(s) > 60.0
    if np.any(far):
        sf = s[far]
        out[far] = -24.0 / sf ** 4 + 192.0 / sf ** 5
    return out


@_vectorized2
def ktilde0_divided_difference(x, y):
    """(Ktilde0(x) - Ktilde0(y)) / (x - y), stable for coincident nodes.

    Nearby nodes use a midpoint Taylor form; nearby-and-small nodes use
    cancellation-free monomial divided differences of the series.  Node
    equality lands exactly on the derivative.
    """
    out = np.empty_like(x)
    diff = x - y
    close = np.abs(diff) < DD_TAYLOR_EPS
    both_small = (np.abs(x) <= 0.5) & (np.abs(y) <= 0.5)

    m_series = close & both_small
    if np.any(m_series):
        xs, ys = x[m_series], y[m_series]
        c = _ktilde_series()
        acc = np.zeros_like(xs)
        # divided difference of s^{2k} is sum_{i+j=2k-1} x^i y^j
        for k in range(1, len(c)):
            p = np.zeros_like(xs)
            for i in range(2 * k):
                p += xs ** i * ys ** (2 * k - 1 - i)
            acc += c[k] * p
        out[m_series] = acc

    m_taylor = close & ~both_small
    if np.any(m_taylor):
        mid = 0.5 * (x[m_taylor] + y[m_taylor])
        dd = diff[m_taylor]
        out[m_taylor] = ktilde0_deriv1(mid) + ktilde0_deriv3(mid) * dd ** 2 / 24.0

    direct = ~close
    if np.any(direct):
        out[direct] = ((eval_Ktilde0(x[direct]) - eval_Ktilde0(y[direct]))
                       / diff[direct])
    return out


# -- bivariate kernels --------------------------------------------------------

def _htilde0_via_dd(s, t):
    """Bivariate kernel from the three-term divided-difference identity.

    Uses the evenness of Ktilde0 to express every term as a divided
    difference of genuinely close nodes; valid for all (s, t).
    """
    term1 = ktilde0_divided_difference(t, -s)
    term2 = ktilde0_divided_difference(s + t, t)
    term3 = ktilde0_divided_difference(s + t, s)
    return -2.0 * (term1 + term2 - term3)


def _h0_closed(s, t):
    st = s + t
    num = (t * st * np.cosh(s) - s * st * np.cosh(t)
           + (s - t) * (st + np.sinh(s) + np.sinh(t) - np.sinh(st)))
    den = (s * t * st * np.sinh(0.5 * s) * np.sinh(0.5 * t)
           * np.sinh(0.5 * st) ** 2)
    return num / den


def _near_line(s, t):
    return ((np.abs(s) < H0_LINE_BOX) | (np.abs(t) < H0_LINE_BOX)
            | (np.abs(s + t) < H0_LINE_BOX))


@_vectorized2
def eval_Htilde0(s, t):
    """Rescaled bivariate kernel 4 sinh((s+t)/2)/(s+t) * H0(s,t)."""
    near = _near_line(s, t)
    out = np.empty_like(s)
    if np.any(near):
        out[near] = _htilde0_via_dd(s[near], t[near])
    far = ~near
    if np.any(far):
        sf, tf = s[far], t[far]
        stf = sf + tf
        out[far] = _h0_closed(sf, tf) * 4.0 * np.sinh(0.5 * stf) / stf
    return out


@_vectorized2
def eval_H0(s, t):
    """Bivariate curvature kernel; all singularities are removable."""
    near = _near_line(s, t)
    out = np.empty_like(s)
    if np.any(near):
        sn, tn = s[near], t[near]
        out[near] = _htilde0_via_dd(sn, tn) * _s_over_4sinh_half(sn + tn)
    far = ~near
    if np.any(far):
        out[far] = _h0_closed(s[far], t[far])
    return out


@dataclass(frozen=True)
class CurvatureKernel:
    """Named evaluator for the curvature-defining entire functions."""

    kind: str
    series_radius: float = SERIES_RADIUS

    def __post_init__(self):
        if self.kind not in _KERNEL_TABLE:
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    @property
    def bivariate(self) -> bool:
        return _KERNEL_TABLE[self.kind][1]

    def __call__(self, *args):
        return _KERNEL_TABLE[self.kind][0](*args)


_KERNEL_TABLE = {
    "K0": (eval_K0, False),
    "H0": (eval_H0, True),
    "Ktilde0": (eval_Ktilde0, False),
    "Htilde0": (eval_Htilde0, True),
    "Kplus": (eval_Kplus, False),
}


# -- modular functional calculus ---------------------------------------------

class ModularCalcContext:
    """Eigen-data of represent(h) shared by the functional calculus.

    Holds the unitary change of basis, the eigenvalues, the transformed
    cyclic vector, and a cache of transformed probe matrices.
    """

    def __init__(self, h: TorusElement, N: int,
                 spectral: ElementSpectral | None = None):
        self.h = h
        self.params = h.params
        self.trunc = GnsTruncation(N)
        spec = spectral or ElementSpectral(h, self.trunc)
        if spec.trunc.N != N:
            raise ValueError("spectral data truncation mismatch")
        self.spectral = spec
        self.evals = spec.evals
        self.evecs = spec.evecs
        self.u = spec.evecs.conj().T @ self.trunc.cyclic_vector()
        # keyed by id; the element is kept alive in the value so a freed
        # object can never alias a cached key
        self._cache: dict[int, tuple[TorusElement, np.ndarray]] = {}

    @property
    def spectral_diameter(self) -> float:
        return float(self.evals[-1] - self.evals[0])

    def transform(self, x: TorusElement) -> np.ndarray:
        got = self._cache.get(id(x))
        if got is not None:
            return got[1]
        X = represent(x, self.trunc).data
        Xt = self.evecs.conj().T @ (X @ self.evecs)
        self._cache[id(x)] = (x, Xt)
        return Xt

    def clear_cache(self):
        self._cache.clear()

    def pull_back(self, vec_eig: np.ndarray, prune: float = 1e-14) -> TorusElement:
        """Eigenbasis result vector -> algebra element via the cyclic vector."""
        vec = self.evecs @ vec_eig
        return vector_to_element(self.params, self.trunc, vec, prune=prune)


def mod_calc_1(kernel: Callable, ctx: ModularCalcContext,
               x: TorusElement) -> TorusElement:
    """Univariate calculus f(grad)(x), grad = -ad(h); exact on the truncation."""
    Xt = ctx.transform(x)
    d = ctx.evals
    F = np.asarray(kernel(d[None, :] - d[:, None]))
    return ctx.pull_back((F * Xt) @ ctx.u)


def mod_calc_1_trace(kernel: Callable, ctx: ModularCalcContext,
                     x: TorusElement) -> complex:
    """trace0 of mod_calc_1 without building the element."""
    Xt = ctx.transform(x)
    d = ctx.evals
    F = np.asarray(kernel(d[None, :] - d[:, None]))
    return complex(np.vdot(ctx.u, (F * Xt) @ ctx.u))


# separated (degenerate) expansion of a bivariate kernel ----------------------

@dataclass
class SeparatedKernel:
    """H(s,t) ~ sum_r left_r(s) right_r(t) on a square, Chebyshev + SVD."""

    nodes: np.ndarray   # Chebyshev points on [-1, 1]
    left: np.ndarray    # (m, r) node values, singular values folded in
    right: np.ndarray   # (m, r)
    scale: float
    rank: int
    error: float

    def eval_columns(self, x: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return _barycentric(self.nodes, cols, np.asarray(x, float) / self.scale)


def _cheb_nodes(m: int) -> np.ndarray:
    return np.cos(np.pi * np.arange(m) / (m - 1))[::-1]


def _barycentric(nodes: np.ndarray, cols: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the interpolants of each column at points x -> (len(x), ncols)."""
    m = len(nodes)
    w = np.ones(m)
    w[1::2] = -1.0
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = x[:, None] - nodes[None, :]
    exact = np.abs(diff) < 1e-14
    diff = np.where(exact, 1.0, diff)
    kern = w[None, :] / diff
    out = (kern @ cols) / kern.sum(axis=1)[:, None]
    hit_rows, hit_cols = np.nonzero(exact)
    if hit_rows.size:
        out[hit_rows] = cols[hit_cols]
    return out


def separate_kernel(fn: Callable, half_width: float, degree: int = 64,
                    tol: float = 1e-13) -> SeparatedKernel:
    """Low-rank separated approximation of a bivariate kernel on a square."""
    nodes = _cheb_nodes(degree + 1)
    ss = nodes * half_width
    Sg, Tg = np.meshgrid(ss, ss, indexing="ij")
    vals = np.broadcast_to(np.asarray(fn(Sg, Tg), dtype=float), Sg.shape).copy()
    U, sig, Wt = np.linalg.svd(vals)
    rank = max(1, int(np.sum(sig > tol * max(sig[0], 1e-300))))
    return SeparatedKernel(nodes=nodes, left=U[:, :rank] * sig[:rank],
                           right=Wt[:rank].T, scale=half_width, rank=rank,
                           error=float(sig[rank]) if rank < len(sig) else 0.0)


def _cheb2_coeffs(fn: Callable, half_width: float, degree: int) -> np.ndarray:
    """Tensor Chebyshev coefficients C with H(s,t) = sum C_pq T_p T_q."""
    m = degree + 1
    nodes = _cheb_nodes(m)
    ss = nodes * half_width
    Sg, Tg = np.meshgrid(ss, ss, indexing="ij")
    vals = np.broadcast_to(np.asarray(fn(Sg, Tg), dtype=float), Sg.shape)
    V = np.polynomial.chebyshev.chebvander(nodes, degree)
    Vinv = np.linalg.inv(V)
    return Vinv @ vals @ Vinv.T


def _cheb_masked_right(D2s, Mt, u, degree, chunk: int = 96):
    """g[q, j] = sum_l T_q(D2s[j, l]) Mt[j, l] u[l] via the recurrence.

    Row-chunked so the three live recurrence blocks stay cache-resident.
    """
    n = u.size
    g = np.empty((degree + 1, n), dtype=complex)
    for j0 in range(0, n, chunk):
        j1 = min(j0 + chunk, n)
        D = D2s[j0:j1]
        Mu = Mt[j0:j1] * u[None, :]
        prev = np.ones_like(D)
        cur = D
        g[0, j0:j1] = Mu.sum(axis=1)
        if degree >= 1:
            g[1, j0:j1] = (cur * Mu).sum(axis=1)
        for q in range(2, degree + 1):
            prev, cur = cur, 2.0 * D * cur - prev
            g[q, j0:j1] = (cur * Mu).sum(axis=1)
    return g


def _cheb_masked_left(D2s, Mt, W, degree, chunk: int = 96):
    """out[i] = sum_p sum_j T_p(D2s[i, j]) Mt[i, j] W[p, j]."""
    n = D2s.shape[0]
    out = np.empty(n, dtype=complex)
    for i0 in range(0, n, chunk):
        i1 = min(i0 + chunk, n)
        D = D2s[i0:i1]
        M = Mt[i0:i1]
        prev = np.ones_like(D)
        cur = D
        acc = (M * W[0][None, :]).sum(axis=1)
        if degree >= 1:
            acc += (cur * M * W[1][None, :]).sum(axis=1)
        for p in range(2, degree + 1):
            prev, cur = cur, 2.0 * D * cur - prev
            acc += (cur * M * W[p][None, :]).sum(axis=1)
        out[i0:i1] = acc
    return out


def mod_calc_2(kernel: Callable, ctx: ModularCalcContext,
               xy_pairs: Sequence[tuple[TorusElement, TorusElement, float]],
               degree: int = 64, sep_tol: float = 1e-13,
               first_slot_only: bool = False) -> TorusElement:
    """Two-slot calculus H(grad_1, grad_2) applied to weighted products.

    In the h-eigenbasis the result matrix is
        R_il = sum_j H(d_j - d_i, d_l - d_j) X~_ij Y~_jl,
    summed over pairs (x, y, weight).  A tensor Chebyshev expansion of H
    (degree high enough that the tail sits at rounding level for the
    entire kernels used here) turns this into masked matrix actions on
    the cyclic vector, generated by the three-term recurrence.  With
    first_slot_only=True the kernel is a function of its first argument
    alone and the evaluation is exact (no expansion).
    """
    d = ctx.evals
    u = ctx.u
    if first_slot_only:
        F = None
        acc = np.zeros(d.size, dtype=complex)
        for (x, y, w) in xy_pairs:
            if w == 0.0:
                continue
            Xt, Yt = ctx.transform(x), ctx.transform(y)
            if F is None:
                F = np.asarray(kernel(d[None, :] - d[:, None]))
            acc += w * ((F * Xt) @ (Yt @ u))
        return ctx.pull_back(acc)

    pad = 0.05 * max(1.0, ctx.spectral_diameter)
    S = ctx.spectral_diameter + pad
    C = _cheb2_coeffs(kernel, S, degree)
    # drop the rounding-level Chebyshev tail before running the recurrences
    mags = np.maximum(np.abs(C).max(axis=0), np.abs(C).max(axis=1))
    big = np.nonzero(mags > sep_tol * max(mags.max(), 1e-300))[0]
    degree = int(big[-1]) if big.size else 0
    C = C[:degree + 1, :degree + 1]
    D2s = (d[None, :] - d[:, None]) / S
    # first pass: per distinct right factor, w[p, j] = sum_q C_pq g[q, j]
    w_vectors: dict[int, np.ndarray] = {}
    for (_, y, w) in xy_pairs:
        if w == 0.0 or id(y) in w_vectors:
            continue
        Yt = ctx.transform(y)
        g = _cheb_masked_right(D2s, Yt, u, degree)
        w_vectors[id(y)] = C @ g
    # combine per distinct left factor, then the second pass
    q_vectors: dict[int, np.ndarray] = {}
    x_by_id: dict[int, TorusElement] = {}
    for (x, y, w) in xy_pairs:
        if w == 0.0:
            continue
        x_by_id[id(x)] = x
        q = q_vectors.get(id(x))
        contribution = w * w_vectors[id(y)]
        q_vectors[id(x)] = contribution if q is None else q + contribution
    acc = np.zeros(d.size, dtype=complex)
    for xid, W in q_vectors.items():
        Xt = ctx.transform(x_by_id[xid])
        acc += _cheb_masked_left(D2s, Xt, W, degree)
    return ctx.pull_back(acc)
