"""Drift and diffusion coefficients synthesised from a fitness model and kernel.

For a selection gradient G = grad1 g(x, x) and mutation density p(x, h) the
trait diffusion carries

    b_k(x)  = int h_k [G . h]_+ p(x, h) dh
    bt_k(x) = 1/2 int_{h.G > 0} h_k (h^T H11g h) p(x, h) dh
    a_kl(x) = int h_k h_l [h . G]_+ p(x, h) dh

with sigma the symmetric PSD square root of a and b_eps = b + eps * bt.  All
three vanish on the singular set, a degenerates linearly off it, and sigma is
only 1/2-Hoelder there, which is exactly what the downstream simulation and
action machinery have to cope with.

Gaussian kernels admit closed forms (half-space moments of a Gaussian);
everything else goes through the rotated-frame quadrature rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatchError, QuadratureError
from .models import FitnessModel, MutationKernel, SingularitySet
from .quadrature import ball_nodes, gaussian_halfspace_nodes

__all__ = [
    "CoefficientField",
    "build_field",
    "builtin_field",
    "eval_a_gaussian_closed_form",
    "sqrt_psd",
    "check_h4",
    "regularity_probe",
    "H4Report",
    "RegularityReport",
]

_SQRT_2_PI = np.sqrt(2.0 / np.pi)
# below this gradient norm a point is treated as exactly singular and all
# coefficients are returned as exact zeros instead of quadrature noise
GRAD_ZERO_TOL = 1e-12


def sqrt_psd(A: np.ndarray, clamp_tol: float = 1e-10, sym_tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition with eigenvalue clamping.

    Accepts a batch (..., d, d).  Eigenvalues in [-clamp_tol, 0) are clamped to
    zero; anything more negative, or an asymmetry beyond sym_tol, is a domain
    error.
    """
    A = np.asarray(A, dtype=float)
    scale = 1.0 + np.max(np.abs(A)) if A.size else 1.0
    asym = np.max(np.abs(A - np.swapaxes(A, -1, -2))) if A.size else 0.0
    if asym > sym_tol * scale:
        raise ValueError(f"matrix is not symmetric (asymmetry {asym:.3e})")
    w, v = np.linalg.eigh(0.5 * (A + np.swapaxes(A, -1, -2)))
    if np.min(w) < -clamp_tol * scale:
        raise ValueError(f"matrix is not PSD (min eigenvalue {np.min(w):.3e})")
    w = np.clip(w, 0.0, None)
    return np.einsum("...ij,...j,...kj->...ik", v, np.sqrt(w), v)


# ---------------------------------------------------------------------------
# field
# ---------------------------------------------------------------------------

@dataclass
class CoefficientField:
    """Bundle of coefficient evaluators over trait space.

    All evaluators are vectorised over a leading batch axis.  The field is
    immutable after construction and safe to share across workers.
    """

    model: FitnessModel
    kernel: MutationKernel
    gamma: SingularitySet
    backend: str = "closed_form"
    quad_tol: float = 1e-8
    quad_nodes: int = 80
    fast_spec: Optional[dict] = field(default=None)

    def __post_init__(self):
        if self.model.dim != self.kernel.dim:
            raise DimensionMismatchError(
                f"model dim {self.model.dim} != kernel dim {self.kernel.dim}")
        if self.backend not in ("closed_form", "quadrature"):
            raise ValueError("backend must be 'closed_form' or 'quadrature'")
        if self.backend == "closed_form" and self.kernel.kind == "custom":
            raise ValueError("closed-form backend requires a Gaussian kernel")

    @property
    def dim(self) -> int:
        return self.model.dim

    # -- internals -----------------------------------------------------------
    def _grad(self, x):
        x = np.asarray(x, dtype=float)
        G = self.model.grad1_diag(x)
        return G, np.linalg.norm(G, axis=-1)

    def _closed_form(self, x, want):
        """Closed-form b/bt/a for Gaussian kernels, batched."""
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        d = self.dim
        G, gn = self._grad(x)
        K = self.kernel.covariance()
        live = gn > GRAD_ZERO_TOL

        out = {}
        if "b" in want:
            out["b"] = np.where(live[..., None], 0.5 * G @ K.T, 0.0)
        if "a" in want or "bt" in want:
            Kw = G @ K.T                                    # (..., d)
            var = np.einsum("...i,...i->...", G, Kw)        # w^T K w
            var = np.where(var > 0, var, 1.0)               # masked later
            sd = np.sqrt(var)
            if "a" in want:
                a = 0.5 * _SQRT_2_PI * (sd[..., None, None] * K
                                        + np.einsum("...i,...j->...ij", Kw, Kw)
                                        / sd[..., None, None])
                out["a"] = np.where(live[..., None, None], a, 0.0)
            if "bt" in want:
                H = self.model.hess11(x, x)
                c = Kw / var[..., None]
                Sp = K - np.einsum("...i,...j->...ij", Kw, Kw) / var[..., None, None]
                Hc = np.einsum("...ij,...j->...i", H, c)
                cHc = np.einsum("...i,...i->...", c, Hc)
                trHS = np.einsum("...ij,...ji->...", H, Sp)
                SpHc = np.einsum("...ij,...j->...i", Sp, Hc)
                bt = 0.25 * (2.0 * _SQRT_2_PI * sd[..., None] ** 3 * cHc[..., None] * c
                             + _SQRT_2_PI * sd[..., None]
                             * (trHS[..., None] * c + 2.0 * SpHc))
                out["bt"] = np.where(live[..., None], bt, 0.0)
        for k, v in out.items():
            out[k] = v.reshape(batch + ((d,) if k != "a" else (d, d)))
        return out

    def _quadrature_point(self, x, want):
        """Quadrature b/bt/a at a single point x."""
        x = np.asarray(x, dtype=float)
        d = self.dim
        G = np.atleast_1d(self.model.grad1_diag(x))
        gn = float(np.linalg.norm(G))
        out = {}
        if gn <= GRAD_ZERO_TOL:
            if "b" in want:
                out["b"] = np.zeros(d)
            if "bt" in want:
                out["bt"] = np.zeros(d)
            if "a" in want:
                out["a"] = np.zeros((d, d))
            return out

        if self.kernel.kind in ("gaussian_isotropic", "gaussian_full"):
            h, wt = gaussian_halfspace_nodes(self.kernel, G, self.quad_nodes)
            h2, wt2 = gaussian_halfspace_nodes(self.kernel, G, self.quad_nodes + 16)
            dens = dens2 = None
        else:
            h, wt = ball_nodes(d, self.kernel.support_radius,
                               self.quad_nodes, self.quad_nodes, u=G)
            h2, wt2 = ball_nodes(d, self.kernel.support_radius,
                                 self.quad_nodes + 16, self.quad_nodes + 16, u=G)
            dens = self.kernel.density(x, h)
            dens2 = self.kernel.density(x, h2)

        def eval_on(hh, ww, dd):
            gh = hh @ G
            pos = np.clip(gh, 0.0, None)
            w_eff = ww * dd if dd is not None else ww
            res = {}
            if "b" in want:
                res["b"] = (w_eff * pos) @ hh
            if "a" in want:
                res["a"] = np.einsum("n,ni,nj->ij", w_eff * pos, hh, hh)
            if "bt" in want:
                H = np.atleast_2d(self.model.hess11(x, x))
                quad = np.einsum("ni,ij,nj->n", hh, H, hh)
                res["bt"] = 0.5 * (w_eff * (gh > 0) * quad) @ hh
            return res

        r1 = eval_on(h, wt, dens)
        r2 = eval_on(h2, wt2, dens2)
        for k in r1:
            err = float(np.max(np.abs(r2[k] - r1[k])))
            scale = float(np.max(np.abs(r2[k]))) + 1e-30
            if err > self.quad_tol * max(scale, 1e-12):
                raise QuadratureError(
                    f"coefficient quadrature for {k!r} did not reach tol "
                    f"{self.quad_tol:g}", achieved=err / max(scale, 1e-12))
            out[k] = r2[k]
        return out

    def _eval(self, x, want):
        x = np.asarray(x, dtype=float)
        if self.backend == "closed_form":
            return self._closed_form(x, want)
        if x.ndim == 1:
            return self._quadrature_point(x, want)
        flat = x.reshape(-1, self.dim)
        rows = [self._quadrature_point(p, want) for p in flat]
        out = {}
        for k in want:
            stacked = np.stack([r[k] for r in rows])
            shp = x.shape[:-1] + stacked.shape[1:]
            out[k] = stacked.reshape(shp)
        return out

    # -- public evaluators -----------------------------------------------------
    def b(self, x) -> np.ndarray:
        return self._eval(x, ("b",))["b"]

    def b_tilde(self, x) -> np.ndarray:
        return self._eval(x, ("bt",))["bt"]

    def a(self, x) -> np.ndarray:
        return self._eval(x, ("a",))["a"]

    def sigma(self, x) -> np.ndarray:
        return sqrt_psd(self.a(x))

    def b_eps(self, x, eps: float) -> np.ndarray:
        r = self._eval(x, ("b", "bt"))
        return r["b"] + eps * r["bt"]

    def drift_diffusion(self, x, eps: float):
        """(b + eps*bt, sigma) in one pass; the simulation hot path."""
        r = self._eval(x, ("b", "bt", "a"))
        return r["b"] + eps * r["bt"], sqrt_psd(r["a"])


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

_FAST_MODELS = ("quad1d", "band1d", "radial2d")


def build_field(model: FitnessModel, kernel: MutationKernel,
                gamma: SingularitySet, backend: str = "auto",
                quad_tol: float = 1e-8, quad_nodes: int = 80) -> CoefficientField:
    """Assemble a CoefficientField; backend 'auto' prefers closed forms."""
    if model.dim != kernel.dim:
        raise DimensionMismatchError(
            f"model dim {model.dim} != kernel dim {kernel.dim}")
    if backend == "auto":
        backend = "closed_form" if kernel.kind in ("gaussian_isotropic",
                                                   "gaussian_full") else "quadrature"
    fast = None
    if (model.name in _FAST_MODELS and kernel.kind == "gaussian_isotropic"
            and backend == "closed_form"):
        fast = {"model": model.name, "kappa": model.params.get("kappa", 0.0),
                "s": kernel.s, "dim": model.dim}
    return CoefficientField(model=model, kernel=kernel, gamma=gamma,
                            backend=backend, quad_tol=quad_tol,
                            quad_nodes=quad_nodes, fast_spec=fast)


def builtin_field(name: str, s: float = 1.0, box_half_width: float = 2.0,
                  grid_per_axis: int = 16, **model_params) -> CoefficientField:
    """Convenience: builtin model + isotropic Gaussian kernel + located gamma."""
    from .models import builtin_model, find_singularities
    m = builtin_model(name, **model_params)
    k = MutationKernel.gaussian_isotropic(m.dim, s)
    box = np.tile([-box_half_width, box_half_width], (m.dim, 1))
    gam = find_singularities(m, box, grid_per_axis)
    return build_field(m, k, gam)


def eval_a_gaussian_closed_form(model: FitnessModel, s: float, x) -> np.ndarray:
    """a(x) for an isotropic Gaussian kernel: (|G|/2) sqrt(2/pi) s^3 (I + vv^T)."""
    x = np.asarray(x, dtype=float)
    G = np.atleast_1d(model.grad1_diag(x))
    gn = float(np.linalg.norm(G))
    d = model.dim
    if gn <= GRAD_ZERO_TOL:
        return np.zeros((d, d))
    v = G / gn
    return 0.5 * gn * _SQRT_2_PI * s ** 3 * (np.eye(d) + np.outer(v, v))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass
class H4Report:
    min_value: float
    positive: bool
    argmin_x: np.ndarray
    argmin_u: np.ndarray
    argmin_v: np.ndarray


def check_h4(kernel: MutationKernel, alpha: float, samples: int,
             seed: int) -> H4Report:
    """Empirical minimum of int |h.u|^2 |h.v| p(x,h) dh over the compact probe set.

    The non-degeneracy of the diffusion matrix off the singular set rests on
    this quantity staying positive; a kernel supported on a lower-dimensional
    set violates it and is flagged here.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(seed)
    d = kernel.dim
    best = (np.inf, None, None, None)
    for _ in range(samples):
        x = rng.standard_normal(d)
        r = np.linalg.norm(x)
        x = x / max(r, 1e-12) * rng.uniform(0.0, 1.0 / alpha)
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        if kernel.kind in ("gaussian_isotropic", "gaussian_full"):
            K = kernel.covariance()
            su2 = float(u @ K @ u)
            sv = float(np.sqrt(v @ K @ v))
            c = float(u @ K @ v)
            val = _SQRT_2_PI * (su2 * sv + c * c / sv)
        else:
            from .quadrature import ball_integral

            def f(h):
                return (h @ u) ** 2 * np.abs(h @ v) * kernel.density(x, h)

            val, _ = ball_integral(f, d, kernel.support_radius)
            val = float(val)
        if val < best[0]:
            best = (val, x, u, v)
    return H4Report(min_value=best[0], positive=best[0] > 0,
                    argmin_x=best[1], argmin_u=best[2], argmin_v=best[3])


@dataclass
class RegularityReport:
    lip_b: float
    lip_a: float
    holder_sigma: float
    lip_sigma: float
    lip_bt: float                   # diagnostic only: bt jumps across the singular set
    min_eig_on_gamma_alpha: float
    n_gamma_alpha_samples: int


def regularity_probe(field: CoefficientField, region, alpha: float,
                     pairs: int, seed: int) -> RegularityReport:
    """Empirical Lipschitz/Hoelder quotients of b, a, sigma over random pairs.

    The Lipschitz quotient of sigma is reported alongside the 1/2-Hoelder one:
    the former is expected to blow up for probe pairs straddling the singular
    set while the latter stays bounded.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    rng = np.random.default_rng(seed)
    region = np.asarray(region, dtype=float)
    if region.ndim == 1:
        region = np.tile(region, (field.dim, 1))
    xs = rng.uniform(region[:, 0], region[:, 1], size=(pairs, field.dim))
    ys = rng.uniform(region[:, 0], region[:, 1], size=(pairs, field.dim))
    keep = np.linalg.norm(xs - ys, axis=1) > 1e-12
    xs, ys = xs[keep], ys[keep]

    bx, by = field.b(xs), field.b(ys)
    btx, bty = field.b_tilde(xs), field.b_tilde(ys)
    ax, ay = field.a(xs), field.a(ys)
    sx, sy = sqrt_psd(ax), sqrt_psd(ay)
    dist = np.linalg.norm(xs - ys, axis=1)
    lip_b = float(np.max(np.linalg.norm(bx - by, axis=1) / dist))
    lip_bt = float(np.max(np.linalg.norm(btx - bty, axis=1) / dist))
    da = np.linalg.norm((ax - ay).reshape(len(xs), -1), axis=1)
    lip_a = float(np.max(da / dist))
    ds = np.linalg.norm((sx - sy).reshape(len(xs), -1), axis=1)
    holder_sigma = float(np.max(ds / np.sqrt(dist)))
    lip_sigma = float(np.max(ds / dist))

    samples = rng.uniform(region[:, 0], region[:, 1], size=(4 * pairs, field.dim))
    in_ga = (field.gamma.distance(samples) >= alpha) & \
            (np.linalg.norm(samples, axis=1) <= 1.0 / alpha)
    ga = samples[in_ga]
    if len(ga):
        eig = np.linalg.eigvalsh(field.a(ga))
        min_eig = float(np.min(eig))
    else:
        min_eig = np.nan
    return RegularityReport(lip_b=lip_b, lip_a=lip_a, holder_sigma=holder_sigma,
                            lip_sigma=lip_sigma, lip_bt=lip_bt,
                            min_eig_on_gamma_alpha=min_eig,
                            n_gamma_alpha_samples=int(in_ga.sum()))
