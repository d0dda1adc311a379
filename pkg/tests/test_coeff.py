import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from punctual import (MutationKernel, build_field, builtin_model,
                      check_h4, eval_a_gaussian_closed_form, find_singularities,
                      regularity_probe, sqrt_psd)
from punctual.errors import DimensionMismatchError

M3_1D = 2.0 * np.sqrt(2.0 / np.pi)
SQRT_2_PI = np.sqrt(2.0 / np.pi)


# ---------------------------------------------------------------------------
# closed forms and quadrature agreement
# ---------------------------------------------------------------------------

def test_quad1d_values(quad1d_field):
    x = np.array([0.5])
    assert quad1d_field.b(x)[0] == pytest.approx(-0.25, rel=1e-12)
    assert quad1d_field.a(x)[0, 0] == pytest.approx(0.3989423, rel=1e-6)
    assert quad1d_field.b_tilde(x)[0] == pytest.approx(0.7978846, rel=1e-6)
    assert quad1d_field.b_eps(x, 0.1)[0] == pytest.approx(-0.25 + 0.1 * 0.79788456,
                                                          rel=1e-7)


def test_coefficients_vanish_on_gamma(band05_field, radial2d_field):
    for fld, y in [(band05_field, np.array([1.0])),
                   (band05_field, np.array([-1.0])),
                   (radial2d_field, np.zeros(2))]:
        assert np.all(fld.b(y) == 0.0)
        assert np.all(fld.b_tilde(y) == 0.0)
        assert np.all(fld.a(y) == 0.0)
        assert np.all(fld.sigma(y) == 0.0)


def test_isotropic_b_is_half_covariance_times_gradient():
    # int h (v.h)_+ p dh = K v / 2 for symmetric kernels
    m = builtin_model("band1d", kappa=0.7)
    k = MutationKernel.gaussian_isotropic(1, 1.4)
    gam = find_singularities(m, [[-2, 2]], 16)
    fld = build_field(m, k, gam)
    rng = np.random.default_rng(0)
    xs = rng.uniform(-0.9, 0.9, size=(25, 1))
    grads = m.grad1_diag(xs)
    assert np.allclose(fld.b(xs), 0.5 * 1.4 ** 2 * grads, rtol=1e-12)


@pytest.mark.parametrize("name,kw", [("quad1d", {}), ("band1d", {"kappa": 0.5}),
                                     ("band1d", {"kappa": 2.0}), ("radial2d", {})])
def test_backend_equivalence(name, kw):
    m = builtin_model(name, **kw)
    k = MutationKernel.gaussian_isotropic(m.dim, 1.0)
    box = np.tile([-1.8, 1.8], (m.dim, 1))
    gam = find_singularities(m, box, 12)
    f_cf = build_field(m, k, gam, backend="closed_form")
    f_q = build_field(m, k, gam, backend="quadrature")
    rng = np.random.default_rng(7)
    xs = rng.uniform(-1.5, 1.5, size=(40, m.dim))
    xs = xs[gam.distance(xs) > 1e-6]
    for x in xs:
        for fn in ("b", "b_tilde", "a"):
            v1 = getattr(f_cf, fn)(x)
            v2 = getattr(f_q, fn)(x)
            scale = np.max(np.abs(v1)) + 1e-12
            assert np.max(np.abs(v1 - v2)) <= 1e-5 * scale, (name, fn, x)


def test_gaussian_full_backend_equivalence():
    m = builtin_model("radial2d")
    K = np.array([[0.8, 0.25], [0.25, 0.5]])
    k = MutationKernel.gaussian_full(K)
    gam = find_singularities(m, [[-1, 1], [-1, 1]], 8)
    f_cf = build_field(m, k, gam, backend="closed_form")
    f_q = build_field(m, k, gam, backend="quadrature")
    rng = np.random.default_rng(8)
    for x in rng.uniform(-1.0, 1.0, size=(10, 2)):
        if gam.distance(x) < 1e-3:
            continue
        for fn in ("b", "b_tilde", "a"):
            v1, v2 = getattr(f_cf, fn)(x), getattr(f_q, fn)(x)
            assert np.max(np.abs(v1 - v2)) <= 1e-6 * (np.max(np.abs(v1)) + 1e-12)


def test_dim1_specialization_formulas(band05_field):
    # b = (M2/2) d1g, bt = (M3/4) sign(d1g) d11g, a = (M3/2)|d1g|
    m = band05_field.model
    rng = np.random.default_rng(9)
    xs = rng.uniform(-0.95, 0.95, size=(50, 1))
    g = m.grad1_diag(xs)[:, 0]
    b = band05_field.b(xs)[:, 0]
    bt = band05_field.b_tilde(xs)[:, 0]
    a = band05_field.a(xs)[:, 0, 0]
    assert np.allclose(b, 0.5 * g, rtol=1e-10)
    assert np.allclose(bt, 0.25 * M3_1D * np.sign(g) * 1.0, rtol=1e-10)
    assert np.allclose(a, 0.5 * M3_1D * np.abs(g), rtol=1e-10)


# ---------------------------------------------------------------------------
# a(x) closed form
# ---------------------------------------------------------------------------

def test_a_closed_form_radial2d_example():
    m = builtin_model("radial2d")
    a = eval_a_gaussian_closed_form(m, 1.0, [0.5, 0.0])
    expect = 0.25 * SQRT_2_PI * np.diag([2.0, 1.0])
    assert np.allclose(a, expect, rtol=1e-12)
    assert np.all(eval_a_gaussian_closed_form(m, 1.0, [0.0, 0.0]) == 0.0)


def test_a_closed_form_vs_monte_carlo():
    # 1e7-sample Monte Carlo of E[h h^T (G.h)_+] at a generic point
    m = builtin_model("radial2d")
    x = np.array([0.4, -0.3])
    G = m.grad1_diag(x)
    rng = np.random.default_rng(2024)
    h = rng.standard_normal((10_000_000, 2))
    w = np.clip(h @ G, 0.0, None)
    mc = (h * w[:, None]).T @ h / len(h)
    a = eval_a_gaussian_closed_form(m, 1.0, x)
    assert np.linalg.norm(mc - a) / np.linalg.norm(a) <= 1e-3


def test_a_psd_and_symmetric_on_probes(radial2d_field):
    rng = np.random.default_rng(11)
    xs = rng.uniform(-1.5, 1.5, size=(1000, 2))
    a = radial2d_field.a(xs)
    assert np.max(np.abs(a - np.swapaxes(a, -1, -2))) <= 1e-14
    assert np.min(np.linalg.eigvalsh(a)) >= -1e-10


def test_a_vanishes_linearly_near_gamma(band05_field, radial2d_field):
    rng = np.random.default_rng(12)
    for fld in (band05_field, radial2d_field):
        for y in fld.gamma.points:
            for delta in (1e-2, 1e-3, 1e-4):
                u = rng.standard_normal(fld.dim)
                u /= np.linalg.norm(u)
                a = fld.a(y + delta * u)
                assert np.linalg.norm(a, 2) <= 4.0 * delta  # C frozen from M3 * |D|


# ---------------------------------------------------------------------------
# sqrt_psd
# ---------------------------------------------------------------------------

def test_sqrt_psd_basics():
    assert np.allclose(sqrt_psd(np.eye(3)), np.eye(3))
    assert np.all(sqrt_psd(np.zeros((2, 2))) == 0.0)
    assert np.allclose(sqrt_psd(np.diag([4.0, 1.0])), np.diag([2.0, 1.0]))


@given(st.integers(0, 10 ** 6), st.integers(1, 6))
@settings(max_examples=40, deadline=None)
def test_sqrt_psd_involution(seed, d):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    A = B @ B.T
    S = sqrt_psd(A)
    assert np.allclose(S, S.T, atol=1e-12)
    assert np.linalg.norm(S @ S - A) <= 1e-12 * max(np.linalg.norm(A), 1.0)


def test_sqrt_psd_rejects_asymmetric():
    with pytest.raises(ValueError):
        sqrt_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_sigma_squares_to_a(radial2d_field):
    rng = np.random.default_rng(13)
    xs = rng.uniform(-1.2, 1.2, size=(200, 2))
    a = radial2d_field.a(xs)
    s = radial2d_field.sigma(xs)
    err = np.max(np.abs(np.einsum("nij,njk->nik", s, s) - a))
    assert err <= 1e-10


# ---------------------------------------------------------------------------
# H4 and regularity
# ---------------------------------------------------------------------------

def test_h4_gaussian_closed_value():
    # with u = v the integrand is the absolute third moment 2 sqrt(2/pi) s^3
    k = MutationKernel.gaussian_isotropic(2, 1.0)
    K = k.covariance()
    u = np.array([1.0, 0.0])
    val = SQRT_2_PI * (u @ K @ u * np.sqrt(u @ K @ u) + (u @ K @ u) ** 2
                       / np.sqrt(u @ K @ u))
    assert val == pytest.approx(2.0 * SQRT_2_PI, rel=1e-12)
    rep = check_h4(k, alpha=0.5, samples=300, seed=0)
    assert rep.positive
    # infimum over directions is sqrt(2/pi) s^3 at orthogonal pairs
    assert rep.min_value >= SQRT_2_PI - 1e-9
    assert rep.min_value <= 2.0 * SQRT_2_PI + 1e-9


def test_h4_flags_degenerate_line_kernel():
    # mass concentrated on a thin slab around the x-axis: |h.e2| ~ 0
    def density(x, h):
        h = np.asarray(h)
        w = 0.01
        band = np.abs(h[..., 1]) < w
        disk = np.abs(h[..., 0]) < 1.0
        return np.where(band & disk, 1.0 / (2.0 * w * 2.0), 0.0)

    k = MutationKernel.custom(2, density, support_radius=1.5)
    rep = check_h4(k, alpha=1.0, samples=60, seed=1)
    assert rep.min_value < 1e-2
    assert not rep.positive or rep.min_value < 1e-2


def test_regularity_probe_quad1d(quad1d_field):
    rep = regularity_probe(quad1d_field, [[-2.0, 2.0]], alpha=0.1,
                           pairs=10_000, seed=0)
    assert rep.lip_b == pytest.approx(0.5, rel=1e-6)   # b(x) = -x/2
    assert rep.min_eig_on_gamma_alpha > 0.0
    assert np.isfinite(rep.holder_sigma)


def test_sigma_lipschitz_blows_up_near_gamma(quad1d_field):
    # sigma ~ c sqrt(|x|): Lipschitz quotient grows ~10x when pairs approach
    # the singularity by a factor 100, the 1/2-Hoelder quotient stays put
    def quotients(center):
        x = np.array([center * 1.01])[:, None]
        y = np.array([center * 0.99])[:, None]
        s1 = quad1d_field.sigma(x[0])
        s2 = quad1d_field.sigma(y[0])
        d = abs(x[0, 0] - y[0, 0])
        return np.abs(s1 - s2)[0, 0] / d, np.abs(s1 - s2)[0, 0] / np.sqrt(d)

    lip_far, hold_far = quotients(1.0)
    lip_near, hold_near = quotients(0.01)
    assert lip_near >= 9.0 * lip_far
    assert hold_near <= 10.0 * hold_far


def test_build_field_dim_mismatch():
    m = builtin_model("radial2d")
    k = MutationKernel.gaussian_isotropic(1, 1.0)
    with pytest.raises(DimensionMismatchError):
        build_field(m, k, find_singularities(m, [[-1, 1], [-1, 1]], 8))
