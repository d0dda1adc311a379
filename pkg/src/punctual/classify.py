"""Classification of evolutionary singularities.

In dimension one the fate of a path between two neighbouring singularities
c < x < c' is decided by the curvature ratios

    alpha = H11g(c,c) / (H11g(c,c) + H12g(c,c)),   beta likewise at c',

with the four-case verdict keyed on (alpha >= 1, beta <= -1).  The scale
function p and speed integral v of the interval diffusion give an independent
numerical route: their endpoint finiteness is decided here by fitting the
local growth exponent of the (log-domain) integrands on meshes refining
geometrically into the endpoints.

Note: the analytic endpoint dichotomy realised by the integrals is
    p diverges at c  iff alpha >= 1,      p diverges at c' iff beta >= 1,
the right-endpoint threshold being the mirror image of the left one (the
local expansion grad1 g(z,z) ~ D (z - c') flips no sign in the ratio).  The
four-case verdict keeps the conventional (alpha >= 1, beta <= -1) keying its
consumers expect; the scale diagnostics report what the integrals actually
do, and `scale_matches_verdict` encodes the mirrored dichotomy.

In dimension d >= 2 the verdict compares the radial drift-correction bounds
and the linear degeneracy rate of the diffusion matrix around a singularity
against Bessel-type thresholds; the constants are estimated empirically on a
Latin-hypercube sample of a punctured ball.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .coeff import CoefficientField, build_field
from .errors import DegenerateSingularityError, UnboundedIntervalError
from .models import FitnessModel, MutationKernel, SingularitySet, as_point

__all__ = [
    "Dim1Verdict",
    "DimDVerdict",
    "ScaleDiagnostics",
    "classify_dim1",
    "scale_functions",
    "classify_dimd",
    "scale_matches_verdict",
]

INCONCLUSIVE_BAND = 0.05   # |fitted exponent - 1| below this is inconclusive


@dataclass
class Dim1Verdict:
    c: float
    c_prime: float
    alpha: float
    beta: float
    case: str                       # a_recurrent | b_hits_right | c_hits_left | d_hits_either
    alpha_alt: float                # via the H22 diagonal identity
    beta_alt: float
    scale_p_left: str = "not_computed"
    scale_p_right: str = "not_computed"
    scale_v_left: str = "not_computed"
    scale_v_right: str = "not_computed"

    def as_dict(self):
        return {k: getattr(self, k) for k in
                ("c", "c_prime", "alpha", "beta", "case", "alpha_alt", "beta_alt",
                 "scale_p_left", "scale_p_right", "scale_v_left", "scale_v_right")}


@dataclass
class DimDVerdict:
    y: np.ndarray
    a_upper: float
    a_lower: float
    bt_upper: float
    bt_lower: float
    criterion_a: float
    criterion_b: float
    verdict: str                    # never_absorbed | absorbed_with_positive_prob | inconclusive
    eig_min: float
    eig_max: float
    D_invertible: bool
    n_samples: int

    def as_dict(self):
        d = {k: getattr(self, k) for k in
             ("a_upper", "a_lower", "bt_upper", "bt_lower", "criterion_a",
              "criterion_b", "verdict", "eig_min", "eig_max", "D_invertible",
              "n_samples")}
        d["y"] = list(np.asarray(self.y, float))
        return d


def _curvatures(model: FitnessModel, c: float) -> tuple:
    p = np.array([c])
    d11 = float(np.atleast_2d(model.hess11(p, p))[0, 0])
    d12 = float(np.atleast_2d(model.hess12(p, p))[0, 0])
    # H22 from second differences of g on the diagonal (independent route)
    h = model.fd_step * (1.0 + abs(c))
    d22 = (float(model.g(p, p + h)) - 2.0 * float(model.g(p, p))
           + float(model.g(p, p - h))) / h ** 2
    return d11, d12, d22


def _ratio(d11: float, d12: float, scale: float) -> float:
    den = d11 + d12
    if abs(den) <= 1e-10 * max(1.0, scale):
        raise DegenerateSingularityError(
            f"H11g + H12g vanishes at the singularity (value {den:.3e})")
    return d11 / den


def classify_dim1(model: FitnessModel, kernel: MutationKernel,
                  gamma: SingularitySet, x: float) -> Dim1Verdict:
    """Four-case verdict for a 1-d start point between two singularities."""
    if model.dim != 1:
        raise ValueError("classify_dim1 requires a 1-d model")
    pts = np.sort(gamma.points[:, 0]) if len(gamma) else np.array([])
    x = float(np.asarray(x).ravel()[0])
    if len(pts) and np.min(np.abs(pts - x)) <= 1e-8:
        raise ValueError("x lies on the singular set")
    left = pts[pts < x]
    right = pts[pts > x]
    if len(left) == 0 or len(right) == 0:
        raise UnboundedIntervalError(
            "no finite neighbouring singularity on one side; no general "
            "verdict is available for unbounded intervals")
    c, c_prime = float(left.max()), float(right.min())

    d11c, d12c, d22c = _curvatures(model, c)
    d11p, d12p, d22p = _curvatures(model, c_prime)
    scale = max(abs(d11c), abs(d11p), 1.0)
    alpha = _ratio(d11c, d12c, scale)
    beta = _ratio(d11p, d12p, scale)
    alpha_alt = 2.0 * d11c / (d11c - d22c) if abs(d11c - d22c) > 1e-10 * scale else np.nan
    beta_alt = 2.0 * d11p / (d11p - d22p) if abs(d11p - d22p) > 1e-10 * scale else np.nan

    if alpha >= 1.0:
        case = "a_recurrent" if beta <= -1.0 else "b_hits_right"
    else:
        case = "c_hits_left" if beta <= -1.0 else "d_hits_either"
    return Dim1Verdict(c=c, c_prime=c_prime, alpha=alpha, beta=beta, case=case,
                       alpha_alt=alpha_alt, beta_alt=beta_alt)


# ---------------------------------------------------------------------------
# scale-function finiteness
# ---------------------------------------------------------------------------

@dataclass
class ScaleDiagnostics:
    p_left: str
    p_right: str
    v_left: str
    v_right: str
    exponent_p_left: float
    exponent_p_right: float
    exponent_v_left: float
    exponent_v_right: float


def _classify_exponent(e: float) -> str:
    if not np.isfinite(e):
        return "inconclusive"
    if abs(e - 1.0) < INCONCLUSIVE_BAND:
        return "inconclusive"
    return "infinite" if e >= 1.0 else "finite"


def _one_side(fld: CoefficientField, eps: float, anchor: float, end: float,
              n_panels: int):
    """Exponent fits for the p- and v-integrands on one endpoint approach.

    Works on a geometric mesh from the anchor into the endpoint.  Everything
    is carried in log domain: L(y) = -2 int_gamma^y b_eps/(eps a), the
    p-integrand is exp(L) and the v-integrand exp(L) * inner(y) with
    inner(y) = |int_gamma^y 2 exp(-L)/(eps a)| accumulated by log-sum-exp.
    """
    span = abs(end - anchor)
    d_min = 1e-8 * span
    ratio = (d_min / span) ** (1.0 / n_panels)
    dist = span * ratio ** np.arange(n_panels + 1)
    ys = anchor + np.sign(end - anchor) * (span - dist)      # anchor -> end

    pts = ys[:, None]
    r = fld._eval(pts, ("b", "bt", "a"))
    beps = (r["b"] + eps * r["bt"])[:, 0]
    a = r["a"][:, 0, 0]
    integrand = beps / (eps * a)

    dy = np.diff(ys)
    L = np.concatenate([[0.0], np.cumsum(-2.0 * 0.5 * (integrand[1:] + integrand[:-1]) * dy)])

    # inner(y) = |cumulative of 2 exp(-L)/(eps a)|, accumulated in log domain
    g_log = -L - np.log(eps * a) + np.log(2.0)
    log_inc = np.logaddexp(g_log[1:], g_log[:-1]) + np.log(0.5 * np.abs(dy))
    log_inner = np.concatenate([[-np.inf], np.logaddexp.accumulate(log_inc)])

    u = -np.log(dist)
    sel = (dist <= 1e-4 * span) & (dist >= d_min)
    if sel.sum() < 4:
        return np.nan, np.nan
    exp_p = np.polyfit(u[sel], L[sel], 1)[0]
    logW = L + log_inner
    ok = sel & np.isfinite(logW)
    exp_v = np.polyfit(u[ok], logW[ok], 1)[0] if ok.sum() >= 4 else np.nan
    return exp_p, exp_v


def scale_functions(fld: CoefficientField, c: float, c_prime: float,
                    gamma_ref: float, eps: float,
                    n_panels: int = 400) -> ScaleDiagnostics:
    """Endpoint finiteness of the scale function p and speed integral v.

    Each limit is classified finite/infinite by the fitted local exponent of
    the integrand against the threshold 1, with an inconclusive band of
    +-0.05 around it.  Exponentials are never formed in linear domain, so
    steep drifts rescale instead of overflowing.
    """
    if not (c < gamma_ref < c_prime):
        raise ValueError("need c < gamma_ref < c_prime")
    if eps <= 0:
        raise ValueError("eps must be positive")
    ep_l, ev_l = _one_side(fld, eps, gamma_ref, c, n_panels)
    ep_r, ev_r = _one_side(fld, eps, gamma_ref, c_prime, n_panels)
    # p divergent at an endpoint forces v divergent there
    v_left = "infinite" if _classify_exponent(ep_l) == "infinite" \
        else _classify_exponent(ev_l)
    v_right = "infinite" if _classify_exponent(ep_r) == "infinite" \
        else _classify_exponent(ev_r)
    return ScaleDiagnostics(
        p_left=_classify_exponent(ep_l), p_right=_classify_exponent(ep_r),
        v_left=v_left, v_right=v_right,
        exponent_p_left=ep_l, exponent_p_right=ep_r,
        exponent_v_left=ev_l, exponent_v_right=ev_r)


def scale_matches_verdict(verdict: Dim1Verdict, diag: ScaleDiagnostics) -> bool:
    """Consistency of conclusive scale diagnostics with the alpha/beta ratios.

    The analytic dichotomy is: p diverges at c iff alpha >= 1, and at c' iff
    beta >= 1 (mirror threshold; see the module docstring).  Inconclusive
    diagnostics never count as disagreement.
    """
    ok = True
    if diag.p_left != "inconclusive":
        ok &= (diag.p_left == "infinite") == (verdict.alpha >= 1.0)
    if diag.p_right != "inconclusive":
        ok &= (diag.p_right == "infinite") == (verdict.beta >= 1.0)
    return bool(ok)


def attach_scale(verdict: Dim1Verdict, fld: CoefficientField, eps: float,
                 n_panels: int = 400) -> Dim1Verdict:
    """Run scale_functions for the verdict's interval and record the enums."""
    diag = scale_functions(fld, verdict.c, verdict.c_prime,
                           0.5 * (verdict.c + verdict.c_prime), eps, n_panels)
    verdict.scale_p_left = diag.p_left
    verdict.scale_p_right = diag.p_right
    verdict.scale_v_left = diag.v_left
    verdict.scale_v_right = diag.v_right
    return verdict


# ---------------------------------------------------------------------------
# dimension d >= 2
# ---------------------------------------------------------------------------

def _spectral_norm(A: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))
    return np.max(np.abs(w), axis=-1)


def classify_dimd(model: FitnessModel, kernel: MutationKernel, y,
                  nbhd_radius: float, samples: int = 10_000,
                  seed: int = 0) -> DimDVerdict:
    """Bessel-comparison verdict around a singularity y in dimension d >= 2.

    Estimates, over a Latin-hypercube sample of the punctured ball
    B(y, nbhd_radius):
      a_upper  -- Lipschitz constant of a (spectral norm quotients),
      a_lower  -- inf of s* a(x) s / (|s|^2 |x - y|),
      bt bounds -- sup/inf of the radial component of bt.
    The verdict is never_absorbed when (bt_lower + d a_lower/2)/a_upper >= 1,
    absorbed_with_positive_prob when (bt_upper + d a_upper/2)/a_lower < 1,
    and inconclusive in the gap the comparison leaves open.
    """
    y = as_point(y, model.dim)
    d = model.dim
    G = np.atleast_1d(model.grad1_diag(y))
    if float(np.linalg.norm(G)) > 1e-8:
        raise ValueError("y is not a singularity (gradient residual exceeds 1e-8)")

    D = np.atleast_2d(model.diag_jacobian(y))
    sv = np.linalg.svd(D, compute_uv=False)
    if sv[-1] <= 1e-12 * max(1.0, sv[0]):
        raise DegenerateSingularityError("D = H11g + H12g is singular at y")
    eig_min, eig_max = float(sv[-1] ** 2), float(sv[0] ** 2)

    gamma = SingularitySet.from_points(y[None, :], d)
    fld = build_field(model, kernel, gamma, backend="auto")

    sampler = qmc.LatinHypercube(d=d, seed=seed)
    cube = (2.0 * sampler.random(samples) - 1.0) * nbhd_radius
    r = np.linalg.norm(cube, axis=1)
    keep = (r <= nbhd_radius) & (r >= 1e-3 * nbhd_radius)
    xs = y + cube[keep]
    if len(xs) < 16:
        raise ValueError("too few admissible samples in the punctured ball")

    rel = xs - y
    dist = np.linalg.norm(rel, axis=1)
    a_vals = fld.a(xs)
    bt_vals = fld.b_tilde(xs)

    # radial bt component
    radial = np.einsum("ni,ni->n", rel, bt_vals) / dist
    bt_upper, bt_lower = float(radial.max()), float(radial.min())

    # degeneracy rate: smallest eigenvalue of a(x) scaled by |x - y|
    a_lower = float(np.min(np.linalg.eigvalsh(a_vals)[:, 0] / dist))

    # Lipschitz constant: shuffled pairs plus radial midpoints (a(y) = 0)
    rng = np.random.default_rng(seed + 1)
    perm = rng.permutation(len(xs))
    pairs_x, pairs_y = xs, xs[perm]
    sep = np.linalg.norm(pairs_x - pairs_y, axis=1)
    good = sep > 1e-9 * nbhd_radius
    quot = _spectral_norm(a_vals[good] - a_vals[perm][good]) / sep[good]
    mid = y + 0.5 * rel
    quot_mid = _spectral_norm(a_vals - fld.a(mid)) / (0.5 * dist)
    quot_origin = _spectral_norm(a_vals) / dist
    a_upper = float(max(quot.max(), quot_mid.max(), quot_origin.max()))

    crit_a = (bt_lower + d * a_lower / 2.0) / a_upper
    crit_b = (bt_upper + d * a_upper / 2.0) / a_lower
    if crit_a >= 1.0:
        verdict = "never_absorbed"
    elif crit_b < 1.0:
        verdict = "absorbed_with_positive_prob"
    else:
        verdict = "inconclusive"
    return DimDVerdict(y=y, a_upper=a_upper, a_lower=a_lower,
                       bt_upper=bt_upper, bt_lower=bt_lower,
                       criterion_a=float(crit_a), criterion_b=float(crit_b),
                       verdict=verdict, eig_min=eig_min, eig_max=eig_max,
                       D_invertible=True, n_samples=int(len(xs)))
