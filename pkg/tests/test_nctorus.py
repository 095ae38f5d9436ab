"""Algebra arithmetic: exact laws, oracles, and the element JSON schema."""

import cmath
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nctlab.nctorus import (AlgebraParams, TorusElement, commutator,
                            conformal_laplacian_of, delta_tau, delta_tau_star,
                            derive, dirichlet_pairs, dirichlet_square,
                            element_from_json, element_to_json, multiply,
                            random_selfadjoint, star, trace0)

THETA = (5.0 ** 0.5 - 1.0) / 2.0
PARAMS = AlgebraParams(theta=THETA, tau=complex(0.3, 1.1))


def normal_order_oracle(theta, word):
    """Reduce a word of (generator, +-1) letters to normal order by swaps.

    Independent of the coefficient arithmetic in multiply(): moves every
    U1-letter to the front one adjacent transposition at a time, each
    crossing of U2^t past U1^s costing the phase exp(2 pi i theta s t).
    """
    word = list(word)
    phase = 1.0
    changed = True
    while changed:
        changed = False
        for i in range(len(word) - 1):
            (g1, s1), (g2, s2) = word[i], word[i + 1]
            if g1 == 2 and g2 == 1:
                # U2^s1 U1^s2 = exp(2 pi i theta s1 s2) U1^s2 U2^s1
                phase *= cmath.exp(2j * math.pi * theta * s1 * s2)
                word[i], word[i + 1] = word[i + 1], word[i]
                changed = True
    m = sum(s for g, s in word if g == 1)
    n = sum(s for g, s in word if g == 2)
    return phase, (m, n)


def monomial(m, n, c=1.0):
    return TorusElement.monomial(PARAMS, m, n, c)


def word_to_element(word):
    out = TorusElement.one(PARAMS)
    for g, s in word:
        out = multiply(out, monomial(1, 0) if (g, s) == (1, 1) else
                       monomial(-1, 0) if (g, s) == (1, -1) else
                       monomial(0, 1) if (g, s) == (2, 1) else
                       monomial(0, -1))
    return out


small_complex = st.complex_numbers(min_magnitude=0.0, max_magnitude=2.0,
                                   allow_nan=False, allow_infinity=False)


def elements(max_radius=2, max_terms=4):
    idx = st.tuples(st.integers(-max_radius, max_radius),
                    st.integers(-max_radius, max_radius))
    return st.dictionaries(idx, small_complex, max_size=max_terms).map(
        lambda d: TorusElement(PARAMS, d))


class TestMultiply:
    def test_exchange_relation(self):
        got = multiply(monomial(0, 1), monomial(1, 0))
        want = cmath.exp(2j * math.pi * THETA)
        assert abs(got.coeff(1, 1) - want) < 1e-15

    def test_unit(self, rng):
        a = random_selfadjoint(PARAMS, rng, radius=2, norm_l1=1.0)
        assert (multiply(TorusElement.one(PARAMS), a) - a).norm_sup() == 0.0

    def test_normal_ordering_oracle(self):
        # (U1^2 U2)(U1 U2^3) and a few scrambled words
        words = [
            [(1, 1), (1, 1), (2, 1), (1, 1), (2, 1), (2, 1), (2, 1)],
            [(2, 1), (1, -1), (2, -1), (1, 1), (2, 1)],
            [(2, -1), (2, -1), (1, 1), (1, 1), (2, 1), (1, -1)],
        ]
        for word in words:
            phase, (m, n) = normal_order_oracle(THETA, word)
            got = word_to_element(word)
            assert len(got) == 1
            assert abs(got.coeff(m, n) - phase) < 1e-13

    def test_u1sq_u2_times_u1_u2cube(self):
        lhs = multiply(word_to_element([(1, 1), (1, 1), (2, 1)]),
                       word_to_element([(1, 1), (2, 1), (2, 1), (2, 1)]))
        phase, mn = normal_order_oracle(
            THETA, [(1, 1), (1, 1), (2, 1), (1, 1), (2, 1), (2, 1), (2, 1)])
        assert mn == (3, 4)
        assert abs(lhs.coeff(3, 4) - phase) < 1e-13

    def test_params_mismatch(self):
        other = AlgebraParams(theta=0.3, tau=1j)
        with pytest.raises(ValueError):
            multiply(monomial(1, 0), TorusElement.monomial(other, 0, 1))

    @settings(max_examples=40, deadline=None)
    @given(elements(), elements(), elements())
    def test_associativity(self, a, b, c):
        lhs = multiply(multiply(a, b), c)
        rhs = multiply(a, multiply(b, c))
        scale = max(1.0, a.norm_l1() * b.norm_l1() * c.norm_l1())
        assert (lhs - rhs).norm_sup() <= 1e-13 * scale


class TestStar:
    def test_generator(self):
        assert star(monomial(1, 0)).coeffs == {(-1, 0): (1 + 0j)}

    def test_scalar(self):
        s = star(monomial(0, 0, 0.3 - 0.7j))
        assert abs(s.coeff(0, 0) - (0.3 + 0.7j)) < 1e-16

    def test_u1u2(self):
        got = star(multiply(monomial(1, 0), monomial(0, 1)))
        phase, mn = normal_order_oracle(THETA, [(2, -1), (1, -1)])
        assert mn == (-1, -1)
        assert abs(got.coeff(-1, -1) - phase) < 1e-14

    @settings(max_examples=40, deadline=None)
    @given(elements(), elements())
    def test_antihomomorphism(self, a, b):
        lhs = star(multiply(a, b))
        rhs = multiply(star(b), star(a))
        scale = max(1.0, a.norm_l1() * b.norm_l1())
        assert (lhs - rhs).norm_sup() <= 1e-13 * scale

    @settings(max_examples=40, deadline=None)
    @given(elements())
    def test_involution(self, a):
        assert (star(star(a)) - a).norm_sup() <= 1e-13 * max(1.0, a.norm_l1())


class TestTrace:
    def test_monomials(self):
        assert trace0(monomial(2, -1)) == 0.0
        assert trace0(TorusElement.one(PARAMS)) == 1.0

    @settings(max_examples=40, deadline=None)
    @given(elements(), elements())
    def test_trace_property(self, a, b):
        lhs = trace0(multiply(a, b))
        rhs = trace0(multiply(b, a))
        assert abs(lhs - rhs) <= 1e-13 * max(1.0, a.norm_l1() * b.norm_l1())

    @settings(max_examples=40, deadline=None)
    @given(elements())
    def test_positivity(self, a):
        val = trace0(multiply(star(a), a))
        assert val.real >= -1e-13 * max(1.0, a.norm_l1() ** 2)
        assert abs(val.imag) <= 1e-13 * max(1.0, a.norm_l1() ** 2)
        if a.norm_sup() > 1e-8:
            assert val.real > 0.0


class TestDerivations:
    def test_basic(self):
        a = word_to_element([(1, 1), (1, 1), (2, 1)])  # U1^2 U2
        assert (derive(a, 1) - 2.0 * a).norm_sup() < 1e-15
        assert derive(TorusElement.one(PARAMS), 1).norm_sup() == 0.0

    @settings(max_examples=40, deadline=None)
    @given(elements(), elements(), st.sampled_from([1, 2]))
    def test_leibniz(self, a, b, j):
        lhs = derive(multiply(a, b), j)
        rhs = multiply(derive(a, j), b) + multiply(a, derive(b, j))
        assert (lhs - rhs).norm_sup() <= 1e-12 * max(
            1.0, a.norm_l1() * b.norm_l1() * (a.support_radius() + b.support_radius() + 1))

    @settings(max_examples=40, deadline=None)
    @given(elements(), elements(), st.sampled_from([1, 2]))
    def test_integration_by_parts(self, a, b, j):
        val = trace0(multiply(a, derive(b, j))) + trace0(multiply(derive(a, j), b))
        assert abs(val) <= 1e-12 * max(1.0, a.norm_l1() * b.norm_l1() * 4)

    def test_delta_tau_multiplier(self):
        tau = PARAMS.tau
        a = monomial(2, -3)
        assert abs(delta_tau(a).coeff(2, -3)
                   - (2 + tau.conjugate() * -3)) < 1e-15
        assert abs(delta_tau_star(a).coeff(2, -3) - (2 + tau * -3)) < 1e-15
        assert delta_tau(TorusElement.one(PARAMS)).norm_sup() == 0.0

    def test_delta_tau_star_then_delta_tau_on_u1(self):
        out = delta_tau(delta_tau_star(monomial(1, 0)))
        assert abs(out.coeff(1, 0) - 1.0) < 1e-15


class TestSecondOrder:
    def test_laplacian_zero_and_example(self):
        h = TorusElement.zero(PARAMS)
        assert conformal_laplacian_of(h).norm_sup() == 0.0
        h = monomial(1, 0) + monomial(-1, 0)
        out = conformal_laplacian_of(h)
        assert abs(out.coeff(1, 0) - 1.0) < 1e-15
        assert abs(out.coeff(-1, 0) - 1.0) < 1e-15

    def test_laplacian_traceless(self, rng):
        h = random_selfadjoint(PARAMS, rng, radius=2, norm_l1=1.5)
        assert trace0(conformal_laplacian_of(h)) == 0.0

    def test_rejects_non_selfadjoint(self):
        with pytest.raises(ValueError):
            conformal_laplacian_of(monomial(1, 0))
        with pytest.raises(ValueError):
            dirichlet_square(monomial(1, 0), "Re")

    def test_re_matches_symmetrized_product(self, rng):
        for _ in range(5):
            h = random_selfadjoint(PARAMS, rng, radius=2, norm_l1=1.0)
            dt, dts = delta_tau(h), delta_tau_star(h)
            oracle = 0.5 * (multiply(dt, dts) + multiply(dts, dt))
            got = dirichlet_square(h, "Re")
            assert (got - oracle).norm_sup() < 1e-12

    def test_im_vanishes_on_a_ray(self):
        h = monomial(1, 0, 0.4) + monomial(-1, 0, 0.4) + monomial(2, 0, 0.1) \
            + monomial(-2, 0, 0.1)
        assert dirichlet_square(h, "Im").norm_sup() < 1e-15

    def test_dirichlet_pairs_sum(self, rng):
        h = random_selfadjoint(PARAMS, rng, radius=1, norm_l1=0.8)
        total = TorusElement.zero(PARAMS)
        for x, y, w in dirichlet_pairs(h):
            total = total + w * multiply(x, y)
        assert (total - dirichlet_square(h, "Re")).norm_sup() < 1e-12


class TestJson:
    def test_roundtrip(self, rng):
        a = random_selfadjoint(PARAMS, rng, radius=2, norm_l1=1.0)
        doc = element_to_json(a, selfadjoint=True)
        b = element_from_json(json.loads(json.dumps(doc)))
        assert (a - b).norm_sup() < 1e-15

    def test_selfadjoint_flag_enforced(self):
        doc = element_to_json(monomial(1, 0), selfadjoint=True)
        with pytest.raises(ValueError):
            element_from_json(doc)


class TestCommutator:
    def test_commutator_trace_free(self, rng):
        a = random_selfadjoint(PARAMS, rng, radius=2, norm_l1=1.0)
        b = random_selfadjoint(PARAMS, rng, radius=2, norm_l1=1.0)
        assert abs(trace0(commutator(a, b))) < 1e-13
