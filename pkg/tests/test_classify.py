import numpy as np
import pytest

from punctual import (MutationKernel, builtin_model, classify_dim1, classify_dimd,
                      find_singularities, scale_functions, scale_matches_verdict)
from punctual.errors import DegenerateSingularityError, UnboundedIntervalError

M3_2D = 3.0 * np.sqrt(np.pi / 2.0)   # E|h|^3 for a standard normal pair


def _verdict(kappa, x=0.0):
    m = builtin_model("band1d", kappa=kappa)
    k = MutationKernel.gaussian_isotropic(1, 1.0)
    gam = find_singularities(m, [[-2, 2]], 32)
    return classify_dim1(m, k, gam, x)


def test_band1d_kappa2_case_a():
    v = _verdict(2.0)
    assert v.alpha == pytest.approx(2.0, abs=1e-10)
    assert v.beta == pytest.approx(-2.0, abs=1e-10)
    assert v.case == "a_recurrent"
    assert (v.c, v.c_prime) == (pytest.approx(-1.0, abs=1e-8),
                                pytest.approx(1.0, abs=1e-8))


def test_band1d_kappa05_case_d():
    v = _verdict(0.5)
    assert v.alpha == pytest.approx(0.5, abs=1e-10)
    assert v.beta == pytest.approx(-0.5, abs=1e-10)
    assert v.case == "d_hits_either"


@pytest.mark.parametrize("a,b,case", [
    (0.5, -1.0, "b_hits_right"),    # alpha = 1.5, beta = 0.5
    (1.0, 0.5, "c_hits_left"),      # alpha = 0.5, beta = -1.5
])
def test_remaining_case_labels(a, b, case):
    # band1d with x-dependent curvature kappa(x) = a + b x decouples the two
    # endpoint ratios: alpha = kappa(-1), beta = -kappa(1)
    from punctual import FitnessModel

    def g(y, x):
        dy = y[..., 0] - x[..., 0]
        return dy * (1.0 - x[..., 0] ** 2) + (a + b * x[..., 0]) * dy * dy

    m = FitnessModel(dim=1, g=g)
    k = MutationKernel.gaussian_isotropic(1, 1.0)
    gam = find_singularities(m, [[-2, 2]], 32)
    v = classify_dim1(m, k, gam, 0.0)
    assert v.alpha == pytest.approx(a - b, abs=1e-4)
    assert v.beta == pytest.approx(-(a + b), abs=1e-4)
    assert v.case == case


def test_alpha_beta_formula_invariance():
    for kappa in (0.5, 2.0, 3.7):
        v = _verdict(kappa)
        assert v.alpha_alt == pytest.approx(v.alpha, rel=1e-8)
        assert v.beta_alt == pytest.approx(v.beta, rel=1e-8)


def test_unbounded_interval_error():
    m = builtin_model("quad1d")
    k = MutationKernel.gaussian_isotropic(1, 1.0)
    gam = find_singularities(m, [[-2, 2]], 16)
    with pytest.raises(UnboundedIntervalError):
        classify_dim1(m, k, gam, 0.5)


def test_x_on_gamma_rejected():
    m = builtin_model("band1d", kappa=0.5)
    k = MutationKernel.gaussian_isotropic(1, 1.0)
    gam = find_singularities(m, [[-2, 2]], 16)
    with pytest.raises(ValueError):
        classify_dim1(m, k, gam, 1.0)


# ---------------------------------------------------------------------------
# scale functions
# ---------------------------------------------------------------------------

def test_scale_functions_kappa05_all_finite(band05_field):
    d = scale_functions(band05_field, -1.0, 1.0, 0.0, eps=0.1)
    assert (d.p_left, d.p_right, d.v_left, d.v_right) == ("finite",) * 4
    assert d.exponent_p_left == pytest.approx(0.5, abs=0.02)
    assert d.exponent_p_right == pytest.approx(-0.5, abs=0.02)


def test_scale_functions_kappa2(band2_field):
    d = scale_functions(band2_field, -1.0, 1.0, 0.0, eps=0.1)
    # left endpoint diverges (alpha = 2 >= 1); the right integrand decays like
    # (c'-y)^2 so p(c'-) is finite -- the mirror of the alpha dichotomy
    assert d.p_left == "infinite"
    assert d.v_left == "infinite"
    assert d.p_right == "finite"
    assert d.exponent_p_left == pytest.approx(2.0, abs=0.02)
    assert d.exponent_p_right == pytest.approx(-2.0, abs=0.02)


def test_scale_agreement_with_ratios(band05_field, band2_field):
    for fld, kappa in [(band05_field, 0.5), (band2_field, 2.0)]:
        v = _verdict(kappa)
        d = scale_functions(fld, v.c, v.c_prime, 0.0, eps=0.1)
        assert scale_matches_verdict(v, d)


def test_scale_functions_eps_robust(band2_field):
    # steep drift exponentials are handled in log domain, never overflow
    d = scale_functions(band2_field, -1.0, 1.0, 0.0, eps=1e-3)
    assert d.p_left == "infinite"
    assert np.isfinite(d.exponent_p_right)


# ---------------------------------------------------------------------------
# dimension d
# ---------------------------------------------------------------------------

def test_classify_dimd_radial2d_constants():
    m = builtin_model("radial2d")
    k = MutationKernel.gaussian_isotropic(2, 1.0)
    v = classify_dimd(m, k, [0.0, 0.0], nbhd_radius=0.3, samples=4000, seed=0)
    assert v.D_invertible
    assert v.eig_min == pytest.approx(1.0, abs=1e-8)
    assert v.eig_max == pytest.approx(1.0, abs=1e-8)
    # bt bounds within the analytic envelope (M3/2)|H11g| + 0.05
    env = 0.5 * M3_2D * 2.0 + 0.05
    assert v.bt_upper <= env
    assert v.bt_lower >= -env
    assert v.a_lower <= v.a_upper
    assert v.criterion_a >= 1.0
    assert v.verdict == "never_absorbed"


def test_classify_dimd_sampling_monotone():
    # enlarging the sample never flips a strict verdict
    m = builtin_model("radial2d")
    k = MutationKernel.gaussian_isotropic(2, 1.0)
    v1 = classify_dimd(m, k, [0.0, 0.0], nbhd_radius=0.3, samples=2000, seed=1)
    v2 = classify_dimd(m, k, [0.0, 0.0], nbhd_radius=0.3, samples=20000, seed=2)
    assert v1.verdict == v2.verdict
    assert abs(v1.criterion_a - v2.criterion_a) <= 0.2


def test_classify_dimd_requires_singularity():
    m = builtin_model("radial2d")
    k = MutationKernel.gaussian_isotropic(2, 1.0)
    with pytest.raises(ValueError):
        classify_dimd(m, k, [0.3, 0.0], nbhd_radius=0.2)


def test_classify_dimd_degenerate_D():
    from punctual import FitnessModel
    # g built so that H11 + H12 = 0 at the singularity: g = (y-x).(y-x)... use
    # g(y,x) = -|y-x|^2 which has grad1 = -2(y-x), D = -2I + 2I = 0
    m = FitnessModel(dim=2, g=lambda y, x: -np.sum((y - x) ** 2, axis=-1))
    k = MutationKernel.gaussian_isotropic(2, 1.0)
    with pytest.raises(DegenerateSingularityError):
        classify_dimd(m, k, [0.0, 0.0], nbhd_radius=0.2)
