"""Discretized Heisenberg bimodules: actions, inner products, spectra."""

import math

import numpy as np
import pytest

from nctlab.nctorus import (AlgebraParams, TorusElement, multiply,
                            random_selfadjoint, star, trace0)
from nctlab.heisenberg import (HeisenbergParams, ModuleGrid, ModuleHeatTrace,
                               act_left, act_left_element, act_left_monomial,
                               act_right, act_right_monomial, connection,
                               gaussian_section, j_transpose, l2_inner,
                               left_action_matrix, module_heat_fit,
                               morita_curvature_check, oscillator_1d_oracle,
                               oscillator_ladder, oscillator_laplacian,
                               probe_action_matrix, valued_inner)

THETA = (5 ** 0.5 - 1) / 2
TAU = complex(0.3, 1.1)
PARAMS = AlgebraParams(theta=THETA, tau=TAU)
GRID = ModuleGrid(L=12.0, G=256)


@pytest.fixture(scope="module", params=[(1, 0, 1, 1), (1, 0, 2, 1)])
def hp(request):
    return HeisenbergParams(*request.param, THETA)


def section(hp, width=0.8, center=0.2, grid=GRID):
    weights = None
    if hp.components > 1:
        weights = [1.0] + [0.5 + 0.2j] * (hp.components - 1)
    return gaussian_section(hp, grid, width=width, center=center,
                            component_weights=weights)


class TestParams:
    def test_determinant_enforced(self):
        with pytest.raises(ValueError):
            HeisenbergParams(1, 1, 2, 1, THETA)

    def test_trivial_bimodule_rejected(self):
        with pytest.raises(ValueError):
            HeisenbergParams(1, 0, 0, 1, THETA)

    def test_derived_fields(self):
        p = HeisenbergParams(1, 0, 1, 1, THETA)
        assert p.rank == pytest.approx(THETA + 1)
        assert p.degree == 1
        assert p.slope == pytest.approx(1 / (THETA + 1))
        assert p.theta_prime == pytest.approx(THETA / (THETA + 1))

    def test_dual_involutive_data(self):
        p = HeisenbergParams(1, 0, 2, 1, THETA)
        d = p.dual()
        assert d.rank == pytest.approx(1 / p.rank)
        assert d.degree == -p.degree
        assert d.theta == pytest.approx(p.theta_prime)
        assert d.theta_prime == pytest.approx(p.theta % 1.0, abs=1e-12) or \
            abs(d.theta_prime - p.theta) < 1e-12


class TestActions:
    def test_right_exchange_relation(self, hp):
        f = section(hp)
        lhs = act_right(act_right(f, "U2"), "U1")
        rhs = act_right(act_right(f, "U1"), "U2").scaled(
            np.exp(2j * np.pi * THETA))
        assert (lhs - rhs).norm() / f.norm() < 1e-8

    def test_left_exchange_relation(self, hp):
        f = section(hp)
        lhs = act_left(act_left(f, "V1"), "V2")
        rhs = act_left(act_left(f, "V2"), "V1").scaled(
            np.exp(2j * np.pi * hp.theta_prime))
        assert (lhs - rhs).norm() / f.norm() < 1e-8

    def test_actions_commute(self, hp):
        f = section(hp)
        for gl in ("V1", "V2"):
            for gr in ("U1", "U2"):
                lhs = act_left(act_right(f, gr), gl)
                rhs = act_right(act_left(f, gl), gr)
                assert (lhs - rhs).norm() / f.norm() < 1e-8, (gl, gr)

    def test_inverse_powers(self, hp):
        f = section(hp)
        for gen in ("U1", "U2"):
            roundtrip = act_right(act_right(f, gen, 1), gen, -1)
            assert (roundtrip - f).norm() / f.norm() < 1e-10

    def test_left_element_action_is_homomorphism(self, hp):
        lp = AlgebraParams(theta=hp.theta_prime % 1.0, tau=TAU)
        rngl = np.random.default_rng(6)
        x = random_selfadjoint(lp, rngl, radius=1, norm_l1=0.6)
        y = random_selfadjoint(lp, rngl, radius=1, norm_l1=0.6)
        f = section(hp)
        lhs = act_left_element(multiply(x, y), f)
        rhs = act_left_element(x, act_left_element(y, f))
        assert (lhs - rhs).norm() / f.norm() < 1e-8


class TestInnerProducts:
    def test_gaussian_l2_closed_form(self, hp):
        f = gaussian_section(hp, GRID, width=0.8, center=0.3)
        want = hp.components * 0.8 * math.sqrt(math.pi)
        assert abs(l2_inner(f, f) - want) < 1e-9

    def test_double_equality(self, hp):
        f1 = section(hp, width=0.8, center=0.2)
        f2 = section(hp, width=1.1, center=-0.4)
        va = valued_inner(f1, f2, "A_theta", cutoff=5, tau=TAU)
        assert abs(trace0(va) - l2_inner(f1, f2)) < 1e-7
        vp = valued_inner(f2, f1, "A_theta_prime", cutoff=5, tau=TAU)
        assert abs(abs(hp.rank) * trace0(vp) - l2_inner(f1, f2)) < 1e-7

    def test_module_property(self, hp):
        f1 = section(hp, width=0.8, center=0.2)
        f2 = section(hp, width=1.0, center=-0.1)
        a = TorusElement(AlgebraParams(theta=hp.theta % 1.0, tau=TAU),
                         {(1, 1): 1.0})
        lhs = valued_inner(f1, act_right_monomial(f2, 1, 1), "A_theta",
                           cutoff=6, tau=TAU)
        rhs = multiply(valued_inner(f1, f2, "A_theta", cutoff=7, tau=TAU), a)
        assert (lhs - rhs).norm_sup() < 1e-10

    def test_positivity(self, hp):
        f = section(hp, width=0.9)
        va = valued_inner(f, f, "A_theta", cutoff=5, tau=TAU)
        assert trace0(va).real > 0
        assert (va - star(va)).norm_sup() < 1e-10

    def test_imprimitivity_compatibility(self):
        p = HeisenbergParams(1, 0, 1, 1, THETA)
        f1 = gaussian_section(p, GRID, width=0.8, center=0.2)
        f2 = gaussian_section(p, GRID, width=1.1, center=-0.4)
        f3 = gaussian_section(p, GRID, width=0.9, center=0.1)
        vp12 = valued_inner(f1, f2, "A_theta_prime", cutoff=8, tau=TAU)
        lhs = act_left_element(vp12, f3)
        va23 = valued_inner(f2, f3, "A_theta", cutoff=8, tau=TAU)
        acc = np.zeros_like(f1.values)
        for (m, n), c in va23.coeffs.items():
            acc = acc + c * act_right_monomial(f1, m, n).values
        rhs = f1.copy(acc)
        assert (lhs - rhs).norm() / lhs.norm() < 1e-7

    def test_cutoff_tail(self, hp):
        f = section(hp, width=0.9)
        va = valued_inner(f, f, "A_theta", cutoff=6, tau=TAU)
        edge = max((abs(c) for (m, n), c in va.coeffs.items()
                    if max(abs(m), abs(n)) == 6), default=0.0)
        assert edge < 1e-8 * max(abs(trace0(va)), 1.0)


class TestConnection:
    def test_commutator(self, hp):
        f = section(hp)
        comm = (connection(connection(f, 2), 1)
                - connection(connection(f, 1), 2))
        want = f.scaled(2j * np.pi * hp.slope)
        assert (comm - want).norm() / f.norm() < 1e-8

    def test_commutator_grid_refinement(self):
        p = HeisenbergParams(1, 0, 1, 1, THETA)
        errs = []
        for G in (128, 256):
            grid = ModuleGrid(L=12.0, G=G)
            f = gaussian_section(p, grid, width=0.8, center=0.2)
            comm = (connection(connection(f, 2), 1)
                    - connection(connection(f, 1), 2))
            errs.append((comm - f.scaled(2j * np.pi * p.slope)).norm() / f.norm())
        assert errs[1] <= max(errs[0], 5e-13)

    def test_derivative_antisymmetric(self, hp):
        f = section(hp, width=0.8, center=0.1)
        g = section(hp, width=1.0, center=-0.2)
        val = l2_inner(connection(f, 1), g) + l2_inner(f, connection(g, 1))
        assert abs(val) < 1e-9

    def test_position_on_gaussian(self):
        p = HeisenbergParams(1, 0, 1, 1, THETA)
        f = gaussian_section(p, GRID, width=0.7)
        out = connection(f, 2)
        want = 2j * np.pi * p.slope * GRID.ts[None, :] * f.values
        assert np.abs(out.values - want).max() < 1e-14


class TestJTranspose:
    def test_square_is_identity_here(self, hp):
        f = section(hp, width=0.8, center=0.0)
        jjf = j_transpose(j_transpose(f))
        assert np.abs(jjf.values - f.values).max() < 1e-9

    def test_gaussian_closed_form(self, hp):
        f = gaussian_section(hp, GRID, width=0.8)
        jf = j_transpose(f)
        want = np.exp(-((hp.rank * GRID.ts) ** 2) / (2 * 0.8 ** 2))
        assert np.abs(jf.values[0] - want).max() < 1e-10

    def test_intertwines_actions(self, hp):
        f = section(hp, width=0.8)
        jf = j_transpose(f)
        for gen in ("U1", "U2"):
            lhs = j_transpose(act_right(f, gen))
            vgen = "V1" if gen == "U1" else "V2"
            rhs = act_left(jf, vgen, -1)
            assert np.abs(lhs.values - rhs.values).max() < 1e-9, gen


class TestOscillator:
    def test_ladder_matches_1d_oracle(self, hp):
        op = oscillator_laplacian(hp, ModuleGrid(L=12.0, G=512), TAU,
                                  ordering="dbar_star_d", rank_scaled=False)
        w = np.linalg.eigvalsh(op.matrix)
        per_comp = w[::hp.components][:8]
        oracle = oscillator_1d_oracle(hp.slope, TAU, nlow=8)
        assert np.abs(per_comp - oracle).max() / abs(oracle).max() < 1e-6

    def test_ladder_spacing_constant(self, hp):
        op = oscillator_laplacian(hp, ModuleGrid(L=12.0, G=512), TAU,
                                  ordering="dbar_star_d", rank_scaled=False)
        w = np.linalg.eigvalsh(op.matrix)[::hp.components][:10]
        gaps = np.diff(w)
        assert np.abs(gaps - gaps[0]).max() / gaps[0] < 1e-6
        lad = oscillator_ladder(hp, TAU)
        assert abs(gaps[0] - abs(lad["commutator"])) / gaps[0] < 1e-8

    def test_holomorphic_commutator(self, hp):
        op = oscillator_laplacian(hp, ModuleGrid(L=12.0, G=256), TAU,
                                  ordering="dbar_star_d", rank_scaled=False)
        A = op.dbar
        comm = A @ A.conj().T - A.conj().T @ A
        s = 4 * np.pi * hp.slope * TAU.imag
        G = 256
        # compare on the interior (position-multiplication wraps at the seam)
        interior = np.abs(np.tile(ModuleGrid(L=12.0, G=256).ts,
                                  hp.components)) < 8.0
        diag = np.diag(comm)[interior]
        assert np.abs(diag + s).max() < 1e-8 * max(1.0, abs(s))

    def test_dual_flat_kernel_and_psd(self, hp):
        dp = hp.dual()
        op = oscillator_laplacian(dp, ModuleGrid(L=12.0, G=512), TAU,
                                  ordering="ddbar_star")
        w = np.linalg.eigvalsh(op.matrix)
        lad = oscillator_ladder(dp, TAU)
        assert lad["kernel_dim"] == dp.components
        assert w[0] > -1e-9
        assert np.abs(w[:dp.components]).max() < 1e-8
        assert abs(w[dp.components] - lad["spacing"]) < 1e-6 * lad["spacing"]


class TestModuleHeat:
    def test_flat_a2_constant(self):
        hp1 = HeisenbergParams(1, 0, 1, 1, THETA)
        dp = hp1.dual()
        op = oscillator_laplacian(dp, ModuleGrid(L=12.0, G=512), TAU,
                                  ordering="ddbar_star")
        mht = ModuleHeatTrace(op)
        fit = module_heat_fit(mht, None)
        want = -dp.degree / 2.0
        assert abs(fit.a0 - 1.0 / oscillator_ladder(dp, TAU)["spacing"]) < 1e-4
        assert abs(fit.a2 - want) < 1e-3 * want

    def test_morita_check(self):
        hp1 = HeisenbergParams(1, 0, 1, 1, THETA)
        rngl = np.random.default_rng(4)
        h = random_selfadjoint(PARAMS, rngl, radius=1, norm_l1=0.4)
        from nctlab.curvature import modular_curvature
        dens = modular_curvature(h, 12).density
        probes = {"one": TorusElement.one(PARAMS),
                  "u1": TorusElement(PARAMS, {(1, 0): 1.0, (-1, 0): 1.0})}
        rep = morita_curvature_check(h, hp1, TAU, ModuleGrid(L=12.0, G=512),
                                     probes, dens)
        for nm, r in rep["probes"].items():
            assert r["conf_dev"] < 0.10, (nm, r)
        assert rep["probes"]["one"]["flat_dev"] < 1e-3

    def test_left_action_matrix_consistency(self, hp):
        # dense matrix action agrees with the sampled monomial action
        lp = AlgebraParams(theta=hp.theta_prime % 1.0, tau=TAU)
        k = TorusElement(lp, {(1, 0): 0.4, (-1, 0): 0.4, (0, 1): 0.2 + 0.1j,
                              (0, -1): 0.2 - 0.1j})
        grid = ModuleGrid(L=12.0, G=128)
        M = left_action_matrix(hp, grid, k)
        f = section(hp, grid=grid)
        direct = act_left_element(k, f)
        got = (M @ f.values.ravel()).reshape(f.values.shape)
        assert np.abs(got - direct.values).max() < 1e-10
