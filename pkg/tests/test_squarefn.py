import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from jumpforms.exceptions import InvalidParameter
from jumpforms.semigroup import decompose
from jumpforms.space import build_torus_stable, dirichlet_form
from jumpforms.squarefn import decay_profile, g_function, g_tilde, h_nabla, h_p, h_tilde

F2 = np.array([1.0, -1.0])


def sign_switch_oracle(space, dec, f, T, evolve, N=20000):
    """Tilde square function up to ``T`` from a dense sign scan, brentq roots
    and per-segment quad, independent of the package's root machinery."""
    rates = dec.eigenvalues if evolve == "heat" else np.sqrt(dec.eigenvalues)
    phi, c = dec.eigenvectors, dec.coefficients(f)
    weight = (lambda t: 1.0) if evolve == "heat" else (lambda t: t)

    def g(t):
        return (c * np.exp(-rates * t)) @ phi.T

    ts = np.concatenate([[0.0], np.geomspace(1e-8, T, N)])
    G = (c[None, :] * np.exp(-np.outer(ts, rates))) @ phi.T
    W, out = space.weights, np.zeros(space.n)
    for i in range(space.n):
        for j in range(i + 1, space.n):
            h = G[:, i] ** 2 - G[:, j] ** 2
            idx = np.flatnonzero(np.sign(h[:-1]) * np.sign(h[1:]) < 0)
            roots = [brentq(lambda t: g(t)[i] ** 2 - g(t)[j] ** 2, ts[k], ts[k + 1], xtol=1e-15, rtol=1e-15) for k in idx]
            pts = [0.0] + roots + [T]
            for a, b in zip(pts[:-1], pts[1:]):
                mid = g(0.5 * (a + b))
                val = W[i, j] * quad(lambda t: weight(t) * (g(t)[i] - g(t)[j]) ** 2, a, b, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
                if mid[i] ** 2 >= mid[j] ** 2:
                    out[i] += val
                if mid[j] ** 2 >= mid[i] ** 2:
                    out[j] += val
    return out


def test_two_state_values(two_state, two_dec):
    assert np.allclose(h_nabla(two_state, two_dec, F2).values, 2 ** -0.5, atol=1e-14)
    assert np.allclose(h_tilde(two_state, two_dec, F2).values, 1.0, atol=1e-8)
    assert np.allclose(g_tilde(two_state, two_dec, F2).values, 2 ** -0.5, atol=1e-8)
    assert np.allclose(g_function(two_state, two_dec, F2).values, 1.0, atol=1e-14)
    assert np.allclose(h_p(two_state, two_dec, F2, 2.0).values, 1.0, atol=1e-7)


def test_l2_identities(torus12, rng):
    dec = decompose(torus12)
    f = rng.standard_normal(12)
    m = torus12.measure
    var = m @ (f - m @ f) ** 2
    assert m @ h_nabla(torus12, dec, f).squared == pytest.approx(0.5 * var, rel=1e-12)
    assert m @ g_function(torus12, dec, f).squared == pytest.approx(var, rel=1e-12)


def test_closed_forms_match_quadrature(torus12, rng):
    dec = decompose(torus12)
    f = rng.standard_normal(12)
    a, b = h_nabla(torus12, dec, f), h_nabla(torus12, dec, f, method="quadrature", tol=1e-10)
    assert np.max(np.abs(a.squared - b.squared)) <= b.error_bound + 1e-12
    a, b = g_function(torus12, dec, f), g_function(torus12, dec, f, method="quadrature", tol=1e-10)
    assert np.max(np.abs(a.squared - b.squared)) <= b.error_bound + 1e-12


def test_finite_horizon_g_increases_to_g(torus8, rng):
    dec = decompose(torus8)
    f = rng.standard_normal(8)
    vals = [g_function(torus8, dec, f, T=T).squared for T in (0.1, 1.0, 10.0)]
    full = g_function(torus8, dec, f).squared
    assert np.all(vals[0] <= vals[1] + 1e-15) and np.all(vals[1] <= vals[2] + 1e-15)
    assert np.all(vals[2] <= full + 1e-15)
    q = g_function(torus8, dec, f, T=1.0, method="quadrature", tol=1e-11)
    assert np.allclose(q.squared, vals[1], atol=q.error_bound + 1e-12)


def test_h2_is_sqrt2_h_nabla(torus8, rng):
    dec = decompose(torus8)
    f = rng.standard_normal(8)
    hp = h_p(torus8, dec, f, 2.0, tol=1e-10)
    assert np.allclose(hp.squared, 2 * h_nabla(torus8, dec, f).squared, atol=hp.error_bound + 1e-12)
    assert hp.quadrature_report["tail_constant"] == pytest.approx(4.0)


@pytest.mark.parametrize("kind", ["H_tilde", "G_tilde"])
def test_piecewise_against_independent_oracle(kind):
    space = build_torus_stable(8, 1.5)
    dec = decompose(space)
    f = np.array([-1.6, -0.9, -0.2, 0.3, -2.1, 2.4, 0.3, -0.5])
    fn, evolve = (h_tilde, "heat") if kind == "H_tilde" else (g_tilde, "poisson")
    res = fn(space, dec, f, tol=1e-10)
    ref = sign_switch_oracle(space, dec, f, res.quadrature_report["t_cut"], evolve)
    assert np.max(np.abs(res.squared - ref)) <= res.quadrature_report["est_error"] + 1e-11


@pytest.mark.parametrize("kind", ["H_tilde", "G_tilde"])
def test_adaptive_agrees_roughly(torus8, rng, kind):
    dec = decompose(torus8)
    f = rng.standard_normal(8)
    fn = h_tilde if kind == "H_tilde" else g_tilde
    a = fn(torus8, dec, f, tol=1e-9)
    b = fn(torus8, dec, f, tol=1e-9, method="adaptive")
    # the adaptive rule straddles indicator jumps; only a loose match is expected
    assert np.max(np.abs(a.squared - b.squared)) < 1e-5


def test_counterexample_to_pointwise_domination():
    space = build_torus_stable(8, 1.5)
    dec = decompose(space)
    f = np.array([-1.6, -0.9, -0.2, 0.3, -2.1, 2.4, 0.3, -0.5])
    ht = h_tilde(space, dec, f, tol=1e-10).squared
    gt = g_tilde(space, dec, f, tol=1e-10).squared
    assert np.flatnonzero(gt > ht + 1e-6).tolist() == [4, 6]
    assert ht[4] == pytest.approx(0.9162, abs=1e-4)
    assert gt[4] == pytest.approx(1.0561, abs=1e-4)


def test_tolerance_refinement_within_bound(torus12, rng):
    dec = decompose(torus12)
    f = rng.standard_normal(12)
    loose = h_tilde(torus12, dec, f, tol=1e-6)
    tight = h_tilde(torus12, dec, f, tol=1e-10)
    assert np.max(np.abs(loose.squared - tight.squared)) <= loose.error_bound + tight.error_bound
    assert loose.error_bound <= 1e-6


def test_constant_field_gives_zero(torus8, two_state):
    dec = decompose(torus8)
    c = np.full(8, 3.0)
    for res in (h_nabla(torus8, dec, c), h_tilde(torus8, dec, c), g_tilde(torus8, dec, c), g_function(torus8, dec, c), h_p(torus8, dec, c, 1.5)):
        assert np.allclose(res.squared, 0.0, atol=1e-12)


def test_batched_matches_single(torus8, rng):
    dec = decompose(torus8)
    F = rng.standard_normal((3, 8))
    batch = h_tilde(torus8, dec, F).squared
    for k in range(3):
        assert np.allclose(batch[k], h_tilde(torus8, dec, F[k]).squared, atol=2e-8)


def test_result_dict_shape(two_state, two_dec):
    d = h_tilde(two_state, two_dec, F2).to_dict()
    assert set(d) == {"kind", "values", "squared", "quadrature_report"}
    assert {"t_cut", "tail_bound", "evaluations", "est_error"} <= set(d["quadrature_report"])


def test_decay_profile_two_state(two_state, two_dec):
    t = np.linspace(0.01, 2.0, 2000)
    prof = decay_profile(two_state, two_dec, F2, 2.0, t)
    assert prof["gamma_ratio"].max() == pytest.approx(np.exp(-0.5), abs=1e-6)
    assert prof["gamma_ratio"][np.argmin(np.abs(t - 0.25))] == pytest.approx(np.exp(-0.5), abs=1e-6)


def test_invalid_arguments(two_state, two_dec):
    with pytest.raises(InvalidParameter):
        h_tilde(two_state, two_dec, F2, tol=0.0)
    with pytest.raises(InvalidParameter):
        h_nabla(two_state, two_dec, F2, method="magic")
    with pytest.raises(InvalidParameter):
        g_function(two_state, two_dec, F2, T=-1.0)
    with pytest.raises(InvalidParameter):
        h_p(two_state, two_dec, F2, 0.5)
    with pytest.raises(InvalidParameter):
        decay_profile(two_state, two_dec, np.zeros(2), 2.0, [1.0])
    with pytest.raises(InvalidParameter):
        h_nabla(two_state, two_dec, np.ones(3))
