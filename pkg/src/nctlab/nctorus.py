"""Exact arithmetic in the smooth noncommutative torus algebra.

Elements are finitely supported Fourier series  a = sum a_{m,n} U1^m U2^n
over the unitary generators obeying  U2 U1 = exp(2*pi*i*theta) U1 U2.
Everything here is pure coefficient bookkeeping: twisted products,
involution, the normalized trace, the two basic derivations and the
first/second order differential expressions built from them.

All values are immutable after construction and safe to share.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Tuple

Index = Tuple[int, int]

# Coefficients smaller than this are dropped after arithmetic; keeps the
# support of repeated products under control.
PRUNE_EPS = 1e-15


@dataclass(frozen=True)
class AlgebraParams:
    """Slope theta in (0,1) and complex structure tau with Im(tau) > 0."""

    theta: float
    tau: complex

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0,1), got {self.theta}")
        if not self.tau.imag > 0.0:
            raise ValueError(f"Im(tau) must be positive, got {self.tau}")

    @property
    def im_tau(self) -> float:
        return self.tau.imag


def _phase(theta: float, k: float) -> complex:
    # exp(2*pi*i*theta*k) with the argument reduced mod 1 first, so that
    # large integer exponents do not lose accuracy in the complex exp.
    return cmath.exp(2j * math.pi * math.fmod(theta * k, 1.0))


class TorusElement:
    """Finitely supported Fourier series over Z^2 with the twisted product."""

    __slots__ = ("params", "_coeffs")

    def __init__(self, params: AlgebraParams, coeffs: Mapping[Index, complex] | None = None,
                 prune: float = PRUNE_EPS):
        self.params = params
        data: Dict[Index, complex] = {}
        if coeffs:
            for (m, n), c in coeffs.items():
                c = complex(c)
                if abs(c) > prune:
                    data[(int(m), int(n))] = c
        self._coeffs = data

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, params: AlgebraParams) -> "TorusElement":
        return cls(params, {})

    @classmethod
    def one(cls, params: AlgebraParams) -> "TorusElement":
        return cls(params, {(0, 0): 1.0})

    @classmethod
    def monomial(cls, params: AlgebraParams, m: int, n: int, c: complex = 1.0) -> "TorusElement":
        return cls(params, {(m, n): c})

    # -- accessors ----------------------------------------------------

    @property
    def coeffs(self) -> Dict[Index, complex]:
        return dict(self._coeffs)

    def coeff(self, m: int, n: int) -> complex:
        return self._coeffs.get((m, n), 0.0)

    def support(self) -> Iterable[Index]:
        return self._coeffs.keys()

    def support_radius(self) -> int:
        if not self._coeffs:
            return 0
        return max(max(abs(m), abs(n)) for (m, n) in self._coeffs)

    def norm_l1(self) -> float:
        return sum(abs(c) for c in self._coeffs.values())

    def norm_sup(self) -> float:
        return max((abs(c) for c in self._coeffs.values()), default=0.0)

    def __len__(self) -> int:
        return len(self._coeffs)

    def __repr__(self) -> str:
        items = sorted(self._coeffs.items())[:6]
        body = ", ".join(f"U^{mn}:{c:.4g}" for mn, c in items)
        more = "" if len(self._coeffs) <= 6 else f", ... ({len(self._coeffs)} terms)"
        return f"TorusElement({body}{more})"

    # -- linear structure ----------------------------------------------

    def _check_params(self, other: "TorusElement") -> None:
        if self.params != other.params:
            raise ValueError("algebra parameters mismatch")

    def __add__(self, other: "TorusElement") -> "TorusElement":
        self._check_params(other)
        data = dict(self._coeffs)
        for k, c in other._coeffs.items():
            data[k] = data.get(k, 0.0) + c
        return TorusElement(self.params, data)

    def __sub__(self, other: "TorusElement") -> "TorusElement":
        return self + (other * (-1.0))

    def __mul__(self, other):
        if isinstance(other, TorusElement):
            return multiply(self, other)
        return TorusElement(self.params, {k: complex(other) * c for k, c in self._coeffs.items()})

    def __rmul__(self, scalar) -> "TorusElement":
        return self.__mul__(scalar)

    def __neg__(self) -> "TorusElement":
        return self * (-1.0)

    def is_selfadjoint(self, tol: float = 1e-12) -> bool:
        diff = self - star(self)
        return diff.norm_sup() <= tol * max(1.0, self.norm_sup())

    def scale_map(self, fn) -> "TorusElement":
        """New element with coefficient at (m,n) multiplied by fn(m, n)."""
        return TorusElement(self.params,
                            {(m, n): c * fn(m, n) for (m, n), c in self._coeffs.items()})


# -- ring operations -----------------------------------------------------

def multiply(a: TorusElement, b: TorusElement) -> TorusElement:
    """Twisted product.

    Monomials compose as
        (U1^p U2^q)(U1^m U2^n) = exp(2*pi*i*theta*q*m) U1^{p+m} U2^{q+n},
    which is forced by the exchange relation of the generators together
    with the normal ordering U1-before-U2 used for storage.
    """
    a._check_params(b)
    theta = a.params.theta
    out: Dict[Index, complex] = {}
    for (p, q), ca in a._coeffs.items():
        for (m, n), cb in b._coeffs.items():
            key = (p + m, q + n)
            out[key] = out.get(key, 0.0) + ca * cb * _phase(theta, q * m)
    return TorusElement(a.params, out)


def star(a: TorusElement) -> TorusElement:
    """Involution: conjugate coefficients, invert monomials, reorder."""
    theta = a.params.theta
    out = {}
    for (m, n), c in a._coeffs.items():
        # (U1^m U2^n)^* = U2^{-n} U1^{-m} = exp(2*pi*i*theta*m*n) U1^{-m} U2^{-n}
        out[(-m, -n)] = c.conjugate() * _phase(theta, m * n)
    return TorusElement(a.params, out)


def trace0(a: TorusElement) -> complex:
    """The unique normalized trace: the coefficient at (0, 0)."""
    return a.coeff(0, 0)


def commutator(a: TorusElement, b: TorusElement) -> TorusElement:
    return multiply(a, b) - multiply(b, a)


# -- derivations ----------------------------------------------------------

def derive(a: TorusElement, j: int) -> TorusElement:
    """Basic derivation delta_j, j in {1,2}: multiply coefficients by m or n."""
    if j == 1:
        return a.scale_map(lambda m, n: m)
    if j == 2:
        return a.scale_map(lambda m, n: n)
    raise ValueError("j must be 1 or 2")


def delta_tau(a: TorusElement) -> TorusElement:
    """delta_1 + conj(tau) * delta_2, coefficient multiplier m + conj(tau)*n."""
    tbar = a.params.tau.conjugate()
    return a.scale_map(lambda m, n: m + tbar * n)


def delta_tau_star(a: TorusElement) -> TorusElement:
    """delta_1 + tau * delta_2, coefficient multiplier m + tau*n."""
    tau = a.params.tau
    return a.scale_map(lambda m, n: m + tau * n)


def _require_selfadjoint(h: TorusElement, what: str) -> None:
    if not h.is_selfadjoint(tol=1e-10):
        raise ValueError(f"{what} requires a self-adjoint element")


def conformal_laplacian_of(h: TorusElement) -> TorusElement:
    """Second-order expression delta_tau(delta_tau_star(h)).

    Coefficientwise this is the multiplier m^2 + 2 Re(tau) m n + |tau|^2 n^2,
    the Dirichlet-form Laplacian attached to the complex structure.
    """
    _require_selfadjoint(h, "conformal_laplacian_of")
    tau = h.params.tau
    re2, ab2 = 2.0 * tau.real, abs(tau) ** 2
    return h.scale_map(lambda m, n: m * m + re2 * m * n + ab2 * n * n)


def dirichlet_square(h: TorusElement, kind: str) -> TorusElement:
    """First-derivative squares entering the curvature formulas.

    kind="Re":  (d1 h)^2 + Re(tau)(d1 h d2 h + d2 h d1 h) + |tau|^2 (d2 h)^2,
    which coincides with the symmetrized product of delta_tau h and
    delta_tau_star h.  kind="Im": half the antisymmetrized product.
    """
    _require_selfadjoint(h, "dirichlet_square")
    if kind == "Re":
        d1, d2 = derive(h, 1), derive(h, 2)
        tau = h.params.tau
        out = multiply(d1, d1)
        cross = multiply(d1, d2) + multiply(d2, d1)
        out = out + tau.real * cross + (abs(tau) ** 2) * multiply(d2, d2)
        return out
    if kind == "Im":
        dt, dts = delta_tau(h), delta_tau_star(h)
        return 0.5 * (multiply(dt, dts) - multiply(dts, dt))
    raise ValueError("kind must be 'Re' or 'Im'")


def dirichlet_pairs(h: TorusElement) -> list[tuple[TorusElement, TorusElement, float]]:
    """The Re-Dirichlet square as weighted (x, y) factor pairs.

    Useful for bivariate functional calculus, where the two factors are
    hit by different operator arguments and must not be multiplied out.
    """
    d1, d2 = derive(h, 1), derive(h, 2)
    tau = h.params.tau
    return [
        (d1, d1, 1.0),
        (d1, d2, tau.real),
        (d2, d1, tau.real),
        (d2, d2, abs(tau) ** 2),
    ]


def random_selfadjoint(params: AlgebraParams, rng, radius: int = 1,
                       norm_l1: float = 1.0,
                       include_scalar: bool = False) -> TorusElement:
    """Random self-adjoint element with the given support radius and l1 norm."""
    coeffs: Dict[Index, complex] = {}
    for m in range(-radius, radius + 1):
        for n in range(-radius, radius + 1):
            if (m, n) <= (0, 0):
                continue
            coeffs[(m, n)] = complex(rng.normal(), rng.normal())
    a = TorusElement(params, coeffs)
    a = a + star(a)
    if include_scalar:
        a = a + TorusElement.monomial(params, 0, 0, float(rng.normal()))
    scale = a.norm_l1()
    if scale == 0.0:
        raise ValueError("degenerate random draw")
    return (norm_l1 / scale) * a


# -- JSON element schema ---------------------------------------------------

def element_to_json(a: TorusElement, selfadjoint: bool | None = None) -> dict:
    doc = {
        "theta": a.params.theta,
        "tau": [a.params.tau.real, a.params.tau.imag],
        "coeffs": [
            {"m": m, "n": n, "re": c.real, "im": c.imag}
            for (m, n), c in sorted(a._coeffs.items())
        ],
    }
    if selfadjoint is not None:
        doc["selfadjoint"] = bool(selfadjoint)
    return doc


def element_from_json(doc: dict) -> TorusElement:
    params = AlgebraParams(theta=float(doc["theta"]),
                           tau=complex(doc["tau"][0], doc["tau"][1]))
    coeffs = {(int(e["m"]), int(e["n"])): complex(e["re"], e.get("im", 0.0))
              for e in doc["coeffs"]}
    el = TorusElement(params, coeffs)
    if doc.get("selfadjoint"):
        if not el.is_selfadjoint(tol=1e-10):
            raise ValueError("element declared selfadjoint fails the check")
    return el


def load_element(path: str) -> TorusElement:
    with open(path) as fh:
        return element_from_json(json.load(fh))


def save_element(a: TorusElement, path: str, selfadjoint: bool | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(element_to_json(a, selfadjoint), fh, indent=1)
