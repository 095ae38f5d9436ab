"""Command-line front end: kernel sweeps, curvature reports, heat fits,
parametrix integration, module spectra, gradient checks, calibration and
the named verification suites.

Exit codes: 0 all tolerances met, 1 tolerance failure (report still
written), 2 configuration error, 3 calibration ambiguity.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import conventions as conv_mod
from .conventions import CalibrationError, calibrate_conventions, load_conventions
from .reports import Check, Report, roundtrip, write_csv


def _parse_tau(s: str) -> complex:
    re, im = (float(x) for x in s.split(","))
    return complex(re, im)


def _parse_grid(s: str):
    a, b, step = (float(x) for x in s.split(":"))
    return np.arange(a, b + 0.5 * step, step)


def _load_dilaton(path: str):
    from .nctorus import load_element
    return load_element(path)


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


# -- subcommands ---------------------------------------------------------------


def cmd_kernels(args) -> int:
    from .modfunc import CurvatureKernel
    kern = CurvatureKernel(args.which)
    grid = _parse_grid(args.grid)
    rows = []
    if kern.bivariate:
        tgrid = _parse_grid(args.grid_t) if args.grid_t else grid
        for s in grid:
            for t in tgrid:
                rows.append((s, t, kern(float(s), float(t))))
        header = ("s", "t", "value")
    else:
        rows = [(s, kern(float(s))) for s in grid]
        header = ("s", "value")
    n = write_csv(args.out, header, rows)
    print(f"wrote {n} rows to {args.out}")
    if args.which == "Kplus":
        print("convention: the anomaly kernel is 2*coth(s/2)/s - 4/s^2, the "
              "unique even nonnegative decaying reading of its defining display")
    return 0


def cmd_curvature(args) -> int:
    from .nctorus import element_to_json, trace0
    from .curvature import F_value, modular_curvature
    h = _load_dilaton(args.input)
    convention = {"cm2014": "CM2014", "lm2015": "LM2015"}[args.convention]
    rep = modular_curvature(h, args.trunc, convention=convention)
    fval = F_value(h, args.trunc)
    report = Report(command="curvature",
                    config={"input": args.input, "trunc": args.trunc,
                            "convention": args.convention})
    report.add(Check.le("gauss_bonnet_residual", rep.gauss_bonnet_residual,
                        args.gb_tol))
    report.add(Check.le("density_selfadjoint", rep.selfadjoint_residual, 1e-9))
    report.values["density"] = element_to_json(rep.density)
    report.values["F_value"] = fval
    report.write(args.out)
    print(f"gauss-bonnet residual {rep.gauss_bonnet_residual:.3e}, "
          f"F = {fval:.8f} -> {args.out}")
    return 0 if report.passed else 1


def cmd_heat_fit(args) -> int:
    from .nctorus import TorusElement
    from .gns import (GnsTruncation, HeatFitConfig, HeatTrace,
                      fit_heat_coefficients, laplacian)
    h = _load_dilaton(args.input)
    trunc = GnsTruncation(args.trunc)
    probe = _load_dilaton(args.probe) if args.probe else None
    L = laplacian("conformal" if h.norm_l1() > 0 else "flat", h, trunc)
    margin = (probe.support_radius() if probe else 0) + h.support_radius()
    ht = HeatTrace(L, margin=margin)
    cfg = HeatFitConfig()
    if args.tgrid:
        t0, t1, pts = args.tgrid.split(":")
        cfg = HeatFitConfig(t_min=float(t0), t_max=float(t1), points=int(pts))
    fit = fit_heat_coefficients(ht, probe, cfg)
    ts = fit.t_grid
    vals = np.real(ht.trace(probe, ts))
    write_csv(args.out_csv, ("t", "trace"), zip(ts, vals))
    report = Report(command="heat-fit",
                    config={"input": args.input, "trunc": args.trunc,
                            "tgrid": args.tgrid, "probe": args.probe})
    report.values.update({"a0": fit.a0, "a2": fit.a2, "a4": fit.a4,
                          "residual": fit.residual, "stability": fit.stability,
                          "condition": fit.cond})
    report.write(args.out)
    print(f"a0={fit.a0:.8f} a2={fit.a2:.8f} resid={fit.residual:.2e} "
          f"stab={fit.stability:.2e} -> {args.out}")
    return 0


def cmd_parametrix_a2(args) -> int:
    from .nctorus import TorusElement
    from .gns import ElementSpectral, GnsTruncation
    from .psymbol import (QuadratureConfig, SymbolCalculus, TwistData,
                          a2_by_integration, conformal_P,
                          conformal_laplacian_multiplier)
    h = _load_dilaton(args.input)
    conv = load_conventions(args.conventions)
    spec = ElementSpectral(h, GnsTruncation(args.trunc))
    k2 = spec.exp_element(1.0)
    calc = SymbolCalculus(h.params, TwistData(0.0), k2=k2)
    if args.eps:
        e1, e2 = (float(x) for x in args.eps.split(","))
        a0 = _load_dilaton(args.a0) if args.a0 else None
        mult = conformal_P(calc, e1, e2, a0)
    else:
        mult = conformal_laplacian_multiplier(calc, spec.exp_element(0.5))
    probes = {"one": TorusElement.one(h.params),
              "u1": TorusElement(h.params, {(1, 0): 1.0, (-1, 0): 1.0})}
    rep = a2_by_integration(calc, mult, probes, N=args.trunc,
                            quad=QuadratureConfig(angles=args.angles),
                            a2_scale=conv.a2_scale)
    report = Report(command="parametrix-a2",
                    config={"input": args.input, "trunc": args.trunc,
                            "eps": args.eps, "angles": args.angles})
    report.values.update({"a2_values": rep.values,
                          "quadrature_error": rep.quadrature_error,
                          "tail_estimate": rep.tail_estimate,
                          "homogeneity_report": rep.homogeneity,
                          "frozen_conventions": conv.to_json()})
    for name, resid in rep.homogeneity.items():
        report.add(Check.le(f"homogeneity_{name}", resid, 1e-9))
    report.write(args.out)
    print(f"a2 values {rep.values} -> {args.out}")
    return 0 if report.passed else 1


def cmd_heisenberg_spectrum(args) -> int:
    from .nctorus import AlgebraParams, TorusElement, trace0, multiply
    from .curvature import modular_curvature
    from .heisenberg import (HeisenbergParams, ModuleGrid,
                             ModuleHeatTrace, morita_curvature_check,
                             oscillator_ladder, oscillator_laplacian)
    a, b, c, d = (int(x) for x in args.g.split(","))
    tau = _parse_tau(args.tau)
    gl, gg = args.grid.split(",")
    grid = ModuleGrid(L=float(gl), G=int(gg))
    gp = HeisenbergParams(a, b, c, d, args.theta)
    dp = gp.dual()
    op = oscillator_laplacian(dp, grid, tau, ordering="ddbar_star")
    w = np.linalg.eigvalsh(op.matrix)
    write_csv(args.out_csv, ("index", "eigenvalue"), enumerate(w[:args.levels]))
    lad = oscillator_ladder(dp, tau)
    report = Report(command="heisenberg-spectrum",
                    config={"g": args.g, "theta": args.theta,
                            "tau": [tau.real, tau.imag], "grid": args.grid,
                            "dilaton": args.dilaton})
    report.values["ladder"] = lad
    if args.dilaton:
        conv = load_conventions(args.conventions)
        h = _load_dilaton(args.dilaton)
        params = h.params
        probes = {"one": TorusElement.one(params),
                  "u1": TorusElement(params, {(1, 0): 1.0, (-1, 0): 1.0})}
        dens = modular_curvature(h, 12).density
        mor = morita_curvature_check(h, gp, tau, grid, probes, dens,
                                     conf_scale=conv.heis_conf_scale,
                                     flat_scale=conv.heis_flat_scale)
        report.values["morita"] = mor
        for nm, r in mor["probes"].items():
            report.add(Check.le(f"morita_flat_{nm}", r["flat_dev"], 0.05))
            report.add(Check.le(f"morita_conf_{nm}", r["conf_dev"], 0.10))
    report.write(args.out)
    print(f"spectrum + report -> {args.out}")
    return 0 if report.passed else 1


def cmd_gradient_check(args) -> int:
    from .nctorus import multiply, random_selfadjoint, trace0
    from .curvature import F_value, grad_F
    h = _load_dilaton(args.input)
    rng = np.random.default_rng(args.seed)
    g = grad_F(h, args.trunc)
    worst = 0.0
    eps = 1e-4
    for _ in range(args.directions):
        a = random_selfadjoint(h.params, rng, radius=1, norm_l1=0.7)
        fd = (F_value(h + eps * a, args.trunc)
              - F_value(h + (-eps) * a, args.trunc)) / (2 * eps)
        pred = trace0(multiply(a, g)).real
        worst = max(worst, abs(fd - pred) / max(abs(fd), 1e-14))
    report = Report(command="gradient-check", seed=args.seed,
                    config={"input": args.input, "trunc": args.trunc,
                            "directions": args.directions})
    report.add(Check.le("gradient_fd_relative", worst, args.tol))
    report.write(args.out)
    print(f"max relative gradient deviation {worst:.3e} -> {args.out}")
    return 0 if report.passed else 1


def cmd_calibrate(args) -> int:
    try:
        conv = calibrate_conventions(path=args.out)
    except CalibrationError as exc:
        print(f"calibration ambiguity: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({k: getattr(conv, k) for k in
                      ("a0_scale", "a2_scale", "heis_flat_scale",
                       "heis_conf_scale")}, indent=1))
    print(f"conventions written to {args.out}")
    return 0


# -- suites ---------------------------------------------------------------------


def _suite_identities(report: Report, rng) -> None:
    from .modfunc import (bernoulli_numbers, eval_Htilde0, eval_K0,
                          eval_Kplus, eval_Ktilde0, ktilde0_divided_difference)
    g = np.arange(-6.0, 6.0 + 1e-9, 0.25)
    S, T = np.meshgrid(g, g, indexing="ij")
    lhs = -0.5 * eval_Htilde0(S, T)
    rhs = (ktilde0_divided_difference(T, -S)
           + ktilde0_divided_difference(S + T, T)
           - ktilde0_divided_difference(S + T, S))
    report.add(Check.le("functional_identity_grid", np.abs(lhs - rhs).max(), 1e-10))
    report.values["fi_grid_max"] = float(np.abs(lhs - rhs).max())
    # seam continuity of every univariate kernel at the branch radius
    from .modfunc import SERIES_RADIUS
    eps = 1e-12
    for name, f in (("K0", eval_K0), ("Ktilde0", eval_Ktilde0),
                    ("Kplus", eval_Kplus)):
        lo = f(SERIES_RADIUS - eps)
        hi = f(SERIES_RADIUS + eps)
        report.add(Check.le(f"seam_{name}", abs(lo - hi), 1e-11))
    B = bernoulli_numbers(14)
    series = [float(8 * B[2 * k] / math.factorial(2 * k)) for k in range(1, 7)]
    report.values["ktilde_series_head"] = series
    report.add(Check.le("ktilde_at_zero", eval_Ktilde0(0.0) - 2.0 / 3.0, 1e-14))


def _suite_curvature(report: Report, rng) -> None:
    from .nctorus import AlgebraParams, TorusElement, random_selfadjoint, trace0
    from .curvature import F_value, modular_curvature
    params = AlgebraParams(theta=(math.sqrt(5) - 1) / 2, tau=complex(0.3, 1.1))
    worst = 0.0
    for _ in range(3):
        h = random_selfadjoint(params, rng, radius=2, norm_l1=1.0)
        rep = modular_curvature(h, 12)
        worst = max(worst, rep.gauss_bonnet_residual)
        report.add(Check.le("density_selfadjoint", rep.selfadjoint_residual, 1e-9))
    report.add(Check.le("gauss_bonnet_max", worst, 1e-7))
    h = random_selfadjoint(params, rng, radius=1, norm_l1=0.5)
    c = TorusElement.monomial(params, 0, 0, 0.4)
    report.add(Check.le("scale_invariance",
                        F_value(h + c, 10) - F_value(h, 10), 1e-9))


def _suite_heat(report: Report, rng) -> None:
    from .nctorus import AlgebraParams, TorusElement, random_selfadjoint
    from .gns import (GnsTruncation, HeatFitConfig, HeatTrace,
                      fit_heat_coefficients, laplacian)
    params = AlgebraParams(theta=(math.sqrt(5) - 1) / 2, tau=complex(0.3, 1.1))
    trunc = GnsTruncation(16)
    one = TorusElement.one(params)
    Lf = laplacian("flat", one, trunc)
    fit = fit_heat_coefficients(HeatTrace(Lf), None)
    a0_exact = math.pi / params.im_tau
    report.add(Check.le("flat_a0", (fit.a0 - a0_exact) / a0_exact, 1e-3))
    report.add(Check.le("flat_a2", fit.a2, 2e-3 * a0_exact))
    report.values["flat_fit"] = {"a0": fit.a0, "a2": fit.a2,
                                 "residual": fit.residual}
    h = random_selfadjoint(params, rng, radius=1, norm_l1=0.4)
    fits = []
    for s in (0.0, 1.0):
        L = laplacian("family_s", h, trunc, s=s)
        fits.append(fit_heat_coefficients(HeatTrace(L, margin=1), None))
    report.add(Check.le("a2_s_independence", fits[0].a2 - fits[1].a2,
                        5e-3 * a0_exact))


def _suite_parametrix(report: Report, rng) -> None:
    from .nctorus import AlgebraParams, TorusElement
    from .psymbol import (SampleGrid, SymbolCalculus, TwistData,
                          gaussian_sample, ud_apply)
    params = AlgebraParams(theta=(math.sqrt(5) - 1) / 2, tau=complex(0.3, 1.1))
    tw = TwistData(b12=0.41)
    calc = SymbolCalculus(params, tw)
    xi1 = calc.scalar(1.0, (1, 0, 0))
    xi2 = calc.scalar(1.0, (0, 1, 0))
    comp = calc.compose(xi1, xi2, order=1) - calc.compose(xi2, xi1, order=1)
    want = 2j * tw.b12
    resid = max((abs(t.coeff - want) if t.mono == (0, 0, 0)
                 else abs(t.coeff)) for t in comp.terms)
    report.add(Check.le("symbol_commutator", resid, 1e-14))
    grid = SampleGrid(L=10.0, G=128)
    u = gaussian_sample(params, grid, width=1.1, center=(0.3, -0.2),
                        momentum=(0.4, 0.1))
    c_op = (ud_apply(tw, (1, 0), ud_apply(tw, (0, 1), u))
            + ud_apply(tw, (0, 1), ud_apply(tw, (1, 0), u)).scaled(-1.0))
    report.add(Check.le("operator_commutator",
                        (c_op + u.scaled(-want)).norm() / u.norm(), 1e-8))
    tw0 = TwistData(0.0)
    lhs = ud_apply(tw0, (2, 1), u)
    rhs = ud_apply(tw0, (1, 0), ud_apply(tw0, (1, 0), ud_apply(tw0, (0, 1), u)))
    report.add(Check.le("untwisted_multiplicativity",
                        (lhs + rhs.scaled(-1.0)).norm() / lhs.norm(), 1e-12))


def _suite_heisenberg(report: Report, rng) -> None:
    from .nctorus import AlgebraParams, trace0
    from .heisenberg import (HeisenbergParams, ModuleGrid, act_left, act_right,
                             connection, gaussian_section, l2_inner,
                             oscillator_1d_oracle, oscillator_ladder,
                             oscillator_laplacian, valued_inner)
    theta = (math.sqrt(5) - 1) / 2
    tau = complex(0.3, 1.1)
    gp = HeisenbergParams(1, 0, 1, 1, theta)
    grid = ModuleGrid(L=12.0, G=256)
    f = gaussian_section(gp, grid, width=0.8, center=0.2)
    lhs = act_right(act_right(f, "U2"), "U1")
    rhs = act_right(act_right(f, "U1"), "U2").scaled(
        np.exp(2j * np.pi * theta))
    report.add(Check.le("right_relation", (lhs - rhs).norm() / f.norm(), 1e-8))
    c1 = (connection(connection(f, 2), 1) - connection(connection(f, 1), 2))
    want = f.scaled(2j * np.pi * gp.slope)
    report.add(Check.le("connection_curvature",
                        (c1 - want).norm() / f.norm(), 1e-8))
    g2 = gaussian_section(gp, grid, width=1.1, center=-0.3)
    va = valued_inner(f, g2, "A_theta", cutoff=5, tau=tau)
    report.add(Check.le("double_equality",
                        abs(trace0(va) - l2_inner(f, g2)), 1e-7))
    op = oscillator_laplacian(gp, grid, tau, ordering="dbar_star_d",
                              rank_scaled=False)
    w = np.linalg.eigvalsh(op.matrix)[:6]
    oracle = oscillator_1d_oracle(gp.slope, tau, nlow=6, G=3000)
    report.add(Check.le("oscillator_ladder",
                        np.abs(w - oracle).max() / abs(oracle[-1]), 1e-5))


def _suite_gradient(report: Report, rng) -> None:
    from .nctorus import AlgebraParams, multiply, random_selfadjoint, trace0
    from .curvature import F_value, grad_F, flat_log_det
    from .modfunc import eval_Kplus
    params = AlgebraParams(theta=(math.sqrt(5) - 1) / 2, tau=complex(0.3, 1.1))
    h = random_selfadjoint(params, rng, radius=1, norm_l1=0.4)
    N = 10
    g = grad_F(h, N)
    worst = 0.0
    eps = 1e-4
    for _ in range(4):
        a = random_selfadjoint(params, rng, radius=1, norm_l1=0.7)
        fd = (F_value(h + eps * a, N) - F_value(h + (-eps) * a, N)) / (2 * eps)
        pred = trace0(multiply(a, g)).real
        worst = max(worst, abs(fd - pred) / max(abs(fd), 1e-14))
    report.add(Check.le("gradient_fd", worst, 1e-5))
    f0 = -flat_log_det(params.tau)
    vals = [F_value(random_selfadjoint(params, rng, radius=1, norm_l1=0.5), N)
            for _ in range(5)]
    report.add(Check.le("extremality", max(0.0, f0 - min(vals)), 1e-12))
    s = np.arange(-50.0, 50.0, 0.25)
    report.add(Check.le("kplus_nonneg", max(0.0, -eval_Kplus(s).min()), 0.0))


_SUITES = {
    "identities": _suite_identities,
    "curvature": _suite_curvature,
    "heat": _suite_heat,
    "parametrix": _suite_parametrix,
    "heisenberg": _suite_heisenberg,
    "gradient": _suite_gradient,
}


def cmd_suite(args) -> int:
    fn = _SUITES.get(args.name)
    if fn is None:
        return _fail(f"unknown suite {args.name!r}")
    rng = np.random.default_rng(args.seed)
    report = Report(command=f"suite:{args.name}", seed=args.seed,
                    config={"name": args.name, "outdir": args.outdir})
    fn(report, rng)
    out = os.path.join(args.outdir, f"suite_{args.name}.json")
    report.write(out)
    roundtrip(report)
    for c in report.checks:
        flag = "PASS" if c.passed else "FAIL"
        print(f"[{flag}] {c.name}: |{c.value:.3e}| <= {c.tolerance:.1e}")
    print(f"report -> {out}")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nctlab",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    k = sub.add_parser("kernels", help="kernel evaluation sweep to CSV")
    k.add_argument("--which", required=True,
                   choices=["K0", "H0", "Ktilde0", "Htilde0", "Kplus"])
    k.add_argument("--grid", required=True, help="a:b:step")
    k.add_argument("--grid-t", default=None, help="second axis for bivariate")
    k.add_argument("--out", default="kernels.csv")
    k.set_defaults(fn=cmd_kernels)

    c = sub.add_parser("curvature", help="curvature density report")
    c.add_argument("--input", required=True)
    c.add_argument("--trunc", type=int, default=12)
    c.add_argument("--convention", choices=["cm2014", "lm2015"],
                   default="cm2014")
    c.add_argument("--gb-tol", type=float, default=1e-7)
    c.add_argument("--out", default="curvature.json")
    c.set_defaults(fn=cmd_curvature)

    hf = sub.add_parser("heat-fit", help="heat trace fit")
    hf.add_argument("--input", required=True)
    hf.add_argument("--trunc", type=int, default=16)
    hf.add_argument("--tgrid", default=None, help="tmin:tmax:P")
    hf.add_argument("--probe", default=None)
    hf.add_argument("--out", default="heatfit.json")
    hf.add_argument("--out-csv", default="heatfit.csv")
    hf.set_defaults(fn=cmd_heat_fit)

    pa = sub.add_parser("parametrix-a2", help="xi-integration of the parametrix")
    pa.add_argument("--input", required=True)
    pa.add_argument("--trunc", type=int, default=8)
    pa.add_argument("--eps", default=None, help="e1,e2 for the generic family")
    pa.add_argument("--a0", default=None)
    pa.add_argument("--angles", type=int, default=32)
    pa.add_argument("--conventions", default=None)
    pa.add_argument("--out", default="parametrix_a2.json")
    pa.set_defaults(fn=cmd_parametrix_a2)

    hs = sub.add_parser("heisenberg-spectrum", help="module spectrum + report")
    hs.add_argument("--g", required=True, help="a,b,c,d")
    hs.add_argument("--theta", type=float, required=True)
    hs.add_argument("--tau", required=True, help="re,im")
    hs.add_argument("--grid", default="12,512", help="L,G")
    hs.add_argument("--levels", type=int, default=64)
    hs.add_argument("--dilaton", default=None)
    hs.add_argument("--conventions", default=None)
    hs.add_argument("--out", default="heisenberg.json")
    hs.add_argument("--out-csv", default="heisenberg_spectrum.csv")
    hs.set_defaults(fn=cmd_heisenberg_spectrum)

    gc = sub.add_parser("gradient-check", help="gradient vs finite differences")
    gc.add_argument("--input", required=True)
    gc.add_argument("--trunc", type=int, default=10)
    gc.add_argument("--directions", type=int, default=5)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-5)
    gc.add_argument("--out", default="gradient_check.json")
    gc.set_defaults(fn=cmd_gradient_check)

    ca = sub.add_parser("calibrate", help="freeze normalization conventions")
    ca.add_argument("--out", default=conv_mod.DEFAULT_PATH)
    ca.set_defaults(fn=cmd_calibrate)

    su = sub.add_parser("suite", help="run a named verification bundle")
    su.add_argument("--name", required=True, choices=sorted(_SUITES))
    su.add_argument("--seed", type=int, default=0)
    su.add_argument("--outdir", default="reports")
    su.set_defaults(fn=cmd_suite)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
