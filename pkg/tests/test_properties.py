"""Property tests for the structural identities and inequalities."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jumpforms.gradients import (
    carre_du_champ,
    gamma_p_definitional,
    gamma_p_explicit,
    i_integral,
    nabla,
    sign_split_slack,
    tilde_nabla,
    tilde_nabla_star,
)
from jumpforms.semigroup import decompose, heat, poisson
from jumpforms.space import Space, build_random_kernel, build_torus_stable, dirichlet_form, lp_norm
from jumpforms.squarefn import g_function, h_nabla

N = 7
finite = st.floats(-10, 10, allow_nan=False, allow_subnormal=False)
fields = arrays(np.float64, N, elements=finite)
positive = arrays(np.float64, N, elements=st.floats(0.01, 10))
p_values = st.floats(1.05, 2.0)
times = st.floats(0.0, 5.0)
SPACE = build_torus_stable(N, 1.2)
DEC = decompose(SPACE)
RANDOM = build_random_kernel(N, 0.6, seed=3)


@given(fields)
def test_energy_matches_gradient(f):
    m = SPACE.measure
    D = dirichlet_form(SPACE, f)
    assert abs(m @ carre_du_champ(SPACE, f) - D) <= 1e-10 * (1 + D)
    assert abs(m @ tilde_nabla_star(SPACE, f, squared=True) - D) <= 1e-10 * (1 + D)


@given(fields)
def test_one_sided_gradient_bounds(f):
    star = tilde_nabla_star(SPACE, f)
    assert np.all(star >= 0)
    assert np.all(star <= np.sqrt(2) * nabla(SPACE, f) + 1e-9 * (1 + np.abs(f).max()))
    tn = tilde_nabla(SPACE, f, squared=True)
    assert np.all(tn <= 2 * carre_du_champ(SPACE, f) * 2 + 1e-9 * (1 + np.abs(f).max() ** 2))


@given(fields, st.floats(0.1, 10))
def test_gradients_are_homogeneous(f, c):
    for op in (nabla, tilde_nabla, tilde_nabla_star):
        assert np.allclose(op(SPACE, c * f), c * op(SPACE, f), rtol=1e-10, atol=1e-9)


@given(fields)
def test_sign_split(f):
    assert sign_split_slack(f) >= -1e-9 * (1 + np.abs(f).max() ** 2)


@given(st.floats(0.0, 50), st.floats(0.0, 50), p_values)
def test_i_integral_range(a, b, p):
    v = i_integral(a, b, p)
    assert -1e-15 <= v <= 1 / p + 1e-12 or (a == 0 and v == 0.0)


@given(positive, p_values)
@settings(max_examples=40, deadline=None)
def test_gamma_p_dual_formulas_agree(f, p):
    a = gamma_p_definitional(SPACE, DEC, f, p)
    b = gamma_p_explicit(SPACE, f, p)
    assert np.allclose(a, b, rtol=1e-7, atol=1e-9 * (1 + f.max() ** 2))


@given(positive, p_values)
@settings(max_examples=40, deadline=None)
def test_gamma_p_sandwich(f, p):
    gp = gamma_p_explicit(SPACE, f, p)
    scale = 1e-9 * (1 + f.max() ** 2)
    assert np.all(gp >= -scale)
    assert np.all(p * (p - 1) / 2 * tilde_nabla(SPACE, f, squared=True) <= gp + scale)
    assert np.all(gp <= 2 * (p - 1) * carre_du_champ(SPACE, f) + scale)


@given(fields, times, times)
@settings(deadline=None)
def test_semigroup_law_and_contraction(f, s, t):
    lhs = heat(SPACE, DEC, heat(SPACE, DEC, f, s), t)
    assert np.allclose(lhs, heat(SPACE, DEC, f, s + t), atol=1e-9 * (1 + np.abs(f).max()))
    for op in (heat, poisson):
        g = op(SPACE, DEC, f, t)
        for p in (1.0, 1.5, 2.0, np.inf):
            assert lp_norm(SPACE, g, p) <= lp_norm(SPACE, f, p) * (1 + 1e-10) + 1e-12


@given(fields)
@settings(deadline=None)
def test_square_function_identities(f):
    m = SPACE.measure
    centered = f - (m @ f) / m.sum()
    var = m @ centered**2
    hn = h_nabla(SPACE, DEC, f).squared
    gg = g_function(SPACE, DEC, f).squared
    assert abs(m @ hn - var / 2) <= 1e-9 * (1 + var)
    assert abs(m @ gg - var) <= 1e-9 * (1 + var)
    assert np.all(hn <= gg + 1e-9 * (1 + var))


@given(fields)
@settings(deadline=None)
def test_random_kernel_space_round_trip(f):
    back = Space.from_json(RANDOM.to_json())
    assert np.array_equal(back.kernel, RANDOM.kernel)
    assert dirichlet_form(back, f) == dirichlet_form(RANDOM, f)
