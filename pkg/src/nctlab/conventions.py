"""Frozen normalization conventions and the calibration run.

The literature leaves a handful of absolute normalizations open: the
Plancherel factor of the covariable integral, the sign and scale tying
the parametrix integral to the fitted heat coefficient, the map between
the two density prefactor conventions, and the module-side scales.  The
constants here are fixed once by flat-case and reference-dilaton
calibrations and then frozen; analytically every dimensionless scale
comes out 1 with the conventions used in this package, and the
calibration verifies that instead of assuming it.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

SCHEMA_VERSION = 1

# exact conversion between the two density prefactor conventions:
# (-pi/2 Im tau) / (1/(4 pi Im tau))
PREFACTOR_MAP_CM_OVER_LM = -2.0 * math.pi ** 2


class CalibrationError(RuntimeError):
    """Raised when measured constants sit nowhere near a consistent value."""


@dataclass
class Conventions:
    """Dimensionless calibration multipliers applied on top of the laws.

    a0_scale: flat covariable integral over pi/Im(tau).
    a2_scale: parametrix integral over the closed-form density pairing.
    heis_flat_scale: module flat coefficient over -degree/2.
    heis_conf_scale: module conformal shift times rank over the density pairing.
    """

    a0_scale: float = 1.0
    a2_scale: float = 1.0
    heis_flat_scale: float = 1.0
    heis_conf_scale: float = 1.0
    schema_version: int = SCHEMA_VERSION
    source: str = "analytic defaults"
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "Conventions":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError("unknown conventions schema version")
        return cls(a0_scale=float(doc["a0_scale"]),
                   a2_scale=float(doc["a2_scale"]),
                   heis_flat_scale=float(doc["heis_flat_scale"]),
                   heis_conf_scale=float(doc["heis_conf_scale"]),
                   source=doc.get("source", "file"),
                   diagnostics=doc.get("diagnostics", {}))


DEFAULT_PATH = "nctlab_conventions.json"


def load_conventions(path: str | None = None) -> Conventions:
    """Load a conventions file, falling back to the analytic defaults."""
    p = path or DEFAULT_PATH
    if os.path.exists(p):
        with open(p) as fh:
            return Conventions.from_json(json.load(fh))
    return Conventions()


def _reference_dilaton(params):
    from .nctorus import TorusElement, star
    half = TorusElement(params, {(1, 0): 0.17, (0, 1): 0.12,
                                 (1, 1): 0.04 + 0.02j})
    return half + star(half)


def calibrate_conventions(theta: float | None = None,
                          tau: complex | None = None,
                          path: str | None = None,
                          write: bool = True) -> Conventions:
    """Measure the four scales on flat and reference configurations.

    Deterministic and idempotent: repeated runs reproduce the constants
    to quadrature precision.  A measured scale further than 5 percent
    from every candidate in {+1, -1} aborts with CalibrationError.
    """
    from .nctorus import AlgebraParams, TorusElement, multiply, trace0
    from .gns import ElementSpectral, GnsTruncation
    from .curvature import modular_curvature
    from .psymbol import (SymbolCalculus, TwistData,
                          conformal_laplacian_multiplier, a2_by_integration,
                          _radial_panels)
    from .heisenberg import (HeisenbergParams, ModuleGrid,
                             morita_curvature_check)

    theta = theta if theta is not None else (math.sqrt(5.0) - 1.0) / 2.0
    tau = tau if tau is not None else complex(0.3, 1.1)
    params = AlgebraParams(theta=theta, tau=tau)
    im = tau.imag
    diagnostics = {"theta": theta, "tau": [tau.real, tau.imag]}

    # 1) flat covariable integral: int exp(-|eta|^2) d(xi) = pi / Im tau
    rs, ws = _radial_panels(40.0, 0.25, 24)
    val = float(np.sum(ws * 2.0 * np.pi * rs * np.exp(-rs ** 2)) / im)
    a0_scale = val / (math.pi / im)
    diagnostics["flat_a0_integral"] = val

    # 2) parametrix integral against the closed-form density
    h = _reference_dilaton(params)
    n_ref = 8
    spec = ElementSpectral(h, GnsTruncation(n_ref))
    k2el = spec.exp_element(1.0)
    kel = spec.exp_element(0.5)
    calc = SymbolCalculus(params, TwistData(0.0), k2=k2el)
    mult = conformal_laplacian_multiplier(calc, kel)
    probe = TorusElement(params, {(1, 0): 1.0, (-1, 0): 1.0})
    rep = a2_by_integration(calc, mult, {"p": probe}, N=n_ref,
                            check_homogeneity=False)
    closed = trace0(multiply(probe, modular_curvature(h, 12).density)).real
    a2_scale = rep.values["p"] / closed
    diagnostics["a2_reference"] = {"integral": rep.values["p"], "closed": closed}

    # 3) module scales on the companion of (1,0;1,1)
    gp = HeisenbergParams(1, 0, 1, 1, theta)
    grid = ModuleGrid(L=12.0, G=512)
    dens = modular_curvature(h, 12).density
    mor = morita_curvature_check(h, gp, tau, grid,
                                 {"one": TorusElement.one(params), "p": probe},
                                 dens, n_dilaton=n_ref)
    pr = mor["probes"]
    heis_flat_scale = pr["one"]["flat_a2"] / pr["one"]["pred_flat"]
    heis_conf_scale = pr["p"]["delta_a2"] / pr["p"]["pred_delta"]
    diagnostics["module"] = mor["module"]

    measured = {"a0_scale": a0_scale, "a2_scale": a2_scale,
                "heis_flat_scale": heis_flat_scale,
                "heis_conf_scale": heis_conf_scale}
    for name, v in measured.items():
        if not any(abs(v - cand) < 0.05 for cand in (1.0, -1.0)):
            raise CalibrationError(
                f"{name} measured {v:.6f}, consistent with no sign candidate")
        if v < 0:
            raise CalibrationError(
                f"{name} measured {v:.6f}: sign flip against the frozen laws")

    conv = Conventions(source="calibrated", diagnostics=diagnostics, **measured)
    if write:
        p = path or DEFAULT_PATH
        with open(p, "w") as fh:
            json.dump(conv.to_json(), fh, indent=1)
    return conv
