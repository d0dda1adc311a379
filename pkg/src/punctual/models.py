"""Biological inputs of the diffusion model: fitness functions and mutation kernels.

A fitness landscape ``g(y, x)`` scores a rare mutant trait ``y`` against a
resident trait ``x``; by construction ``g(x, x) = 0``.  Trait points where the
selection gradient vanishes (``grad1 g(x, x) = 0``) form the singular set on
which every diffusion coefficient degenerates, so locating them reliably is a
prerequisite for everything downstream.

All evaluators are vectorised over a leading batch axis: ``y`` and ``x`` have
shape ``(..., d)``, values have shape ``(...)``, gradients ``(..., d)`` and
Hessians ``(..., d, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from .errors import (
    DimensionMismatchError,
    ModelEvaluationError,
    QuadratureError,
)

__all__ = [
    "FitnessModel",
    "MutationKernel",
    "SingularitySet",
    "FitnessAxiomReport",
    "builtin_model",
    "quad1d",
    "band1d",
    "radial2d",
    "check_fitness_axioms",
    "find_singularities",
    "kernel_moment",
]


def as_point(x, dim: Optional[int] = None) -> np.ndarray:
    """Coerce scalars/sequences to a float vector, optionally checking length."""
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if dim is not None and p.shape[-1] != dim:
        raise DimensionMismatchError(f"expected point of dimension {dim}, got shape {p.shape}")
    return p


# ---------------------------------------------------------------------------
# fitness model
# ---------------------------------------------------------------------------

@dataclass
class FitnessModel:
    """Fitness function with derivative access in the mutant slot.

    ``g`` must satisfy ``g(x, x) = 0``.  ``grad1``/``hess11`` differentiate in
    the first (mutant) argument, ``hess12`` is the mixed block d^2 g / dy dx.
    Missing derivatives are filled in with central finite differences of step
    ``fd_step * (1 + |x|)``.
    """

    dim: int
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad1: Callable[[np.ndarray, np.ndarray], np.ndarray] = None
    hess11: Callable[[np.ndarray, np.ndarray], np.ndarray] = None
    hess12: Callable[[np.ndarray, np.ndarray], np.ndarray] = None
    deriv_mode: str = "analytic"
    fd_step: float = 1e-5
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.grad1 is None or self.hess11 is None or self.hess12 is None:
            self.deriv_mode = "finite_difference"
        if self.grad1 is None:
            self.grad1 = self._fd_grad1
        if self.hess11 is None:
            self.hess11 = self._fd_hess11
        if self.hess12 is None:
            self.hess12 = self._fd_hess12

    # -- finite-difference fallbacks ---------------------------------------
    def _step(self, x):
        return self.fd_step * (1.0 + np.linalg.norm(np.asarray(x), axis=-1, keepdims=True))

    def _fd_grad1(self, y, x):
        y = np.asarray(y, float)
        x = np.asarray(x, float)
        h = self._step(y)
        out = np.empty(np.broadcast_shapes(y.shape, x.shape))
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = 1.0
            out[..., i] = (self.g(y + h * e, x) - self.g(y - h * e, x)) / (2.0 * h[..., 0])
        return out

    def _fd_hess11(self, y, x):
        y = np.asarray(y, float)
        x = np.asarray(x, float)
        h = self._step(y)
        d = self.dim
        shp = np.broadcast_shapes(y.shape, x.shape)[:-1]
        out = np.empty(shp + (d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            gp = self.grad1(y + h * e, x)
            gm = self.grad1(y - h * e, x)
            out[..., :, j] = (gp - gm) / (2.0 * h)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def _fd_hess12(self, y, x):
        y = np.asarray(y, float)
        x = np.asarray(x, float)
        h = self._step(x)
        d = self.dim
        shp = np.broadcast_shapes(y.shape, x.shape)[:-1]
        out = np.empty(shp + (d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            gp = self.grad1(y, x + h * e)
            gm = self.grad1(y, x - h * e)
            out[..., :, j] = (gp - gm) / (2.0 * h)
        return out

    # -- diagonal shortcuts --------------------------------------------------
    def grad1_diag(self, x):
        """grad1 g(x, x); the selection gradient driving the slow dynamics."""
        x = np.asarray(x, float)
        return self.grad1(x, x)

    def diag_jacobian(self, x):
        """Jacobian of x -> grad1 g(x, x), i.e. hess11 + hess12 at (x, x)."""
        x = np.asarray(x, float)
        return self.hess11(x, x) + self.hess12(x, x)


# ---------------------------------------------------------------------------
# builtin models
# ---------------------------------------------------------------------------

def quad1d() -> FitnessModel:
    """1-d quadratic landscape g(y,x) = -x(y-x) - (y-x)^2; singular at 0."""

    def g(y, x):
        dy = y[..., 0] - x[..., 0]
        return -x[..., 0] * dy - dy * dy

    def grad1(y, x):
        return (-x[..., 0] - 2.0 * (y[..., 0] - x[..., 0]))[..., None]

    def hess11(y, x):
        shp = np.broadcast_shapes(y.shape, x.shape)[:-1]
        return np.broadcast_to(np.array([[-2.0]]), shp + (1, 1)).copy()

    def hess12(y, x):
        shp = np.broadcast_shapes(y.shape, x.shape)[:-1]
        return np.broadcast_to(np.array([[1.0]]), shp + (1, 1)).copy()

    return FitnessModel(dim=1, g=g, grad1=grad1, hess11=hess11, hess12=hess12,
                        name="quad1d")


def band1d(kappa: float = 0.5) -> FitnessModel:
    """1-d landscape g(y,x) = (y-x)(1-x^2) + kappa (y-x)^2; singular at -1 and 1."""

    def g(y, x):
        dy = y[..., 0] - x[..., 0]
        return dy * (1.0 - x[..., 0] ** 2) + kappa * dy * dy

    def grad1(y, x):
        return ((1.0 - x[..., 0] ** 2) + 2.0 * kappa * (y[..., 0] - x[..., 0]))[..., None]

    def hess11(y, x):
        shp = np.broadcast_shapes(y.shape, x.shape)[:-1]
        return np.broadcast_to(np.array([[2.0 * kappa]]), shp + (1, 1)).copy()

    def hess12(y, x):
        out = np.empty(np.broadcast_shapes(y.shape, x.shape)[:-1] + (1, 1))
        out[..., 0, 0] = -2.0 * x[..., 0] - 2.0 * kappa
        return out

    return FitnessModel(dim=1, g=g, grad1=grad1, hess11=hess11, hess12=hess12,
                        name="band1d", params={"kappa": kappa})


def radial2d() -> FitnessModel:
    """2-d radial landscape g(y,x) = -x.(y-x) - |y-x|^2; singular at the origin."""

    def g(y, x):
        dy = y - x
        return -np.einsum("...i,...i->...", x, dy) - np.einsum("...i,...i->...", dy, dy)

    def grad1(y, x):
        return -x - 2.0 * (y - x)

    def hess11(y, x):
        shp = np.broadcast_shapes(y.shape, x.shape)[:-1]
        return np.broadcast_to(-2.0 * np.eye(2), shp + (2, 2)).copy()

    def hess12(y, x):
        shp = np.broadcast_shapes(y.shape, x.shape)[:-1]
        return np.broadcast_to(np.eye(2), shp + (2, 2)).copy()

    return FitnessModel(dim=2, g=g, grad1=grad1, hess11=hess11, hess12=hess12,
                        name="radial2d")


_BUILTINS = {"quad1d": quad1d, "band1d": band1d, "radial2d": radial2d}


def builtin_model(name: str, **params) -> FitnessModel:
    """Construct a named builtin model (quad1d, band1d, radial2d)."""
    try:
        ctor = _BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown builtin model {name!r}; known: {sorted(_BUILTINS)}")
    return ctor(**params)


# ---------------------------------------------------------------------------
# mutation kernels
# ---------------------------------------------------------------------------

def _chi_moment(dim: int, order: int) -> float:
    # E |Z|^order for Z standard normal in R^dim
    return math.exp(0.5 * order * math.log(2.0)
                    + gammaln((dim + order) / 2.0) - gammaln(dim / 2.0))


@dataclass
class MutationKernel:
    """Distribution of mutational steps h = y - x, symmetric about 0.

    Three kinds are supported: isotropic Gaussian with scale ``s``, full
    Gaussian with SPD covariance ``K``, and a user density with declared
    (finite) ``support_radius`` used to truncate all quadratures.
    """

    dim: int
    kind: str
    s: float = None
    K: np.ndarray = None
    density_fn: Callable = None
    support_radius: float = None
    x_dependent: bool = False

    @staticmethod
    def gaussian_isotropic(dim: int, s: float) -> "MutationKernel":
        if s <= 0:
            raise ValueError("s must be positive")
        return MutationKernel(dim=dim, kind="gaussian_isotropic", s=float(s))

    @staticmethod
    def gaussian_full(K) -> "MutationKernel":
        K = np.asarray(K, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError("K must be a square matrix")
        if not np.allclose(K, K.T, atol=1e-12):
            raise ValueError("K must be symmetric")
        if np.linalg.eigvalsh(K).min() <= 0:
            raise ValueError("K must be positive definite")
        return MutationKernel(dim=K.shape[0], kind="gaussian_full", K=K)

    @staticmethod
    def custom(dim: int, density, support_radius: float,
               x_dependent: bool = True) -> "MutationKernel":
        if support_radius is None or support_radius <= 0:
            raise ValueError("custom kernels must declare a finite support_radius")
        return MutationKernel(dim=dim, kind="custom", density_fn=density,
                              support_radius=float(support_radius),
                              x_dependent=x_dependent)

    # -- density -------------------------------------------------------------
    def density(self, x, h):
        """p(x, h); vectorised over a leading batch axis of h."""
        h = np.asarray(h, dtype=float)
        if self.kind == "gaussian_isotropic":
            q = np.sum(h * h, axis=-1) / (2.0 * self.s ** 2)
            return np.exp(-q) / (2.0 * np.pi * self.s ** 2) ** (self.dim / 2.0)
        if self.kind == "gaussian_full":
            Kinv = np.linalg.inv(self.K)
            q = 0.5 * np.einsum("...i,ij,...j->...", h, Kinv, h)
            det = np.linalg.det(self.K)
            return np.exp(-q) / np.sqrt((2.0 * np.pi) ** self.dim * det)
        return np.asarray(self.density_fn(x, h), dtype=float)

    def covariance(self) -> np.ndarray:
        if self.kind == "gaussian_isotropic":
            return self.s ** 2 * np.eye(self.dim)
        if self.kind == "gaussian_full":
            return self.K
        raise ValueError("covariance only available in closed form for Gaussian kinds")

    # -- moments ---------------------------------------------------------------
    def moment(self, x, order: int) -> float:
        """M_order(x) = integral of |h|^order p(x, h) dh, for order in {2, 3}."""
        if order not in (2, 3):
            raise ValueError("order must be 2 or 3")
        if self.kind == "gaussian_isotropic":
            return self.s ** order * _chi_moment(self.dim, order)
        if self.kind == "gaussian_full":
            if order == 2:
                return float(np.trace(self.K))
            return self._moment_gauss_full(order)
        return self._moment_custom(x, order)

    def _moment_gauss_full(self, order: int) -> float:
        # E |K^{1/2} z|^order via tensorised Gauss-Hermite; no closed form.
        if self.dim > 4:
            raise QuadratureError("full-Gaussian third moments supported up to d=4")
        from numpy.polynomial.hermite_e import hermegauss
        nodes, weights = hermegauss(48)
        w, v = np.linalg.eigh(self.K)
        root = v @ np.diag(np.sqrt(w)) @ v.T
        grids = np.meshgrid(*([nodes] * self.dim), indexing="ij")
        z = np.stack([g.ravel() for g in grids], axis=-1)
        wts = np.prod(np.stack(np.meshgrid(*([weights] * self.dim), indexing="ij"),
                               axis=-1).reshape(-1, self.dim), axis=1)
        hh = z @ root.T
        vals = np.linalg.norm(hh, axis=1) ** order
        return float(np.sum(wts * vals) / (2.0 * np.pi) ** (self.dim / 2.0))

    def _moment_custom(self, x, order: int) -> float:
        from .quadrature import ball_integral
        x = as_point(x, self.dim)

        def f(h):
            return np.linalg.norm(h, axis=-1) ** order * self.density(x, h)

        val, err = ball_integral(f, self.dim, self.support_radius)
        if not np.isfinite(val):
            raise QuadratureError("custom kernel moment quadrature diverged", achieved=err)
        return float(val)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n mutation steps (Gaussian kinds only); used by Monte Carlo checks."""
        if self.kind == "gaussian_isotropic":
            return self.s * rng.standard_normal((n, self.dim))
        if self.kind == "gaussian_full":
            w, v = np.linalg.eigh(self.K)
            root = v @ np.diag(np.sqrt(w)) @ v.T
            return rng.standard_normal((n, self.dim)) @ root.T
        raise ValueError("sampling implemented for Gaussian kinds only")


def kernel_moment(kernel: MutationKernel, x, order: int) -> float:
    """Moment M_order(x); closed form for Gaussians, ball quadrature otherwise."""
    return kernel.moment(x, order)


# ---------------------------------------------------------------------------
# singularities
# ---------------------------------------------------------------------------

@dataclass
class SingularitySet:
    """Located zeros of the selection gradient inside a search box."""

    points: np.ndarray                      # (m, d)
    residuals: np.ndarray                   # (m,)
    search_box: np.ndarray                  # (d, 2)
    merge_radius: float = 1e-4
    warning: Optional[str] = None

    def __len__(self):
        return self.points.shape[0]

    def distance(self, x) -> np.ndarray:
        """Euclidean distance from x (shape (..., d)) to the nearest singularity."""
        x = np.asarray(x, dtype=float)
        if len(self) == 0:
            return np.full(x.shape[:-1], np.inf)
        diff = x[..., None, :] - self.points          # (..., m, d)
        return np.sqrt(np.sum(diff * diff, axis=-1)).min(axis=-1)

    def nearest(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        diff = x[None, :] - self.points if x.ndim == 1 else None
        if diff is None:
            raise ValueError("nearest expects a single point")
        i = int(np.argmin(np.linalg.norm(diff, axis=-1)))
        return self.points[i]

    @staticmethod
    def from_points(points, dim: int, merge_radius: float = 1e-4) -> "SingularitySet":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.size == 0:
            pts = np.zeros((0, dim))
        box = np.stack([pts.min(axis=0) - 1.0, pts.max(axis=0) + 1.0], axis=1) \
            if len(pts) else np.stack([-np.ones(dim), np.ones(dim)], axis=1)
        return SingularitySet(points=pts, residuals=np.zeros(len(pts)),
                              search_box=box, merge_radius=merge_radius)


def find_singularities(model: FitnessModel, box, grid_per_axis: int,
                       merge_radius: float = 1e-4,
                       residual_tol: float = 1e-8,
                       max_iter: int = 60) -> SingularitySet:
    """Multi-start damped Newton search for zeros of F(x) = grad1 g(x, x).

    Seeds are laid on a regular grid inside ``box``.  The Newton system uses
    the diagonal Jacobian hess11 + hess12.  Converged roots are deduplicated
    at ``merge_radius`` and reported with their residual norms.  An empty
    result is not an error: the box may simply contain no singularity.
    """
    if grid_per_axis < 2:
        raise ValueError("grid_per_axis must be >= 2")
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        box = np.tile(box, (model.dim, 1))
    if box.shape != (model.dim, 2) or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must be a nondegenerate (d, 2) array of [lo, hi]")

    axes = [np.linspace(lo, hi, grid_per_axis) for lo, hi in box]
    seeds = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    span = np.max(box[:, 1] - box[:, 0])
    margin = 0.05 * span

    def fval(x):
        try:
            return np.atleast_1d(model.grad1_diag(x))
        except Exception as e:  # propagate with context
            raise ModelEvaluationError(f"grad1 evaluation failed: {e}", point=x) from e

    roots, resids = [], []
    for seed in seeds:
        x = seed.copy()
        f = fval(x)
        ok = False
        for _ in range(max_iter):
            nf = np.linalg.norm(f)
            if nf <= 1e-13 * (1.0 + span):
                ok = True
                break
            J = np.atleast_2d(model.diag_jacobian(x))
            try:
                step = np.linalg.solve(J, f)
            except np.linalg.LinAlgError:
                break
            lam = 1.0
            for _ in range(40):
                xn = x - lam * step
                fn = fval(xn)
                if np.linalg.norm(fn) < nf:
                    break
                lam *= 0.5
            else:
                break
            x, f = xn, fn
        nf = float(np.linalg.norm(fval(x)))
        if (ok or nf <= residual_tol) and nf <= residual_tol:
            if np.all(x >= box[:, 0] - margin) and np.all(x <= box[:, 1] + margin):
                roots.append(x)
                resids.append(nf)

    # deduplicate, best residual first
    order = np.argsort(resids)
    kept, kept_res = [], []
    for i in order:
        if all(np.linalg.norm(roots[i] - k) >= merge_radius for k in kept):
            kept.append(roots[i])
            kept_res.append(resids[i])
    pts = np.array(kept) if kept else np.zeros((0, model.dim))
    res = np.array(kept_res) if kept_res else np.zeros(0)
    warning = None if len(kept) else "no singularity converged in the search box"
    idx = np.lexsort(pts.T[::-1]) if len(kept) else np.array([], dtype=int)
    return SingularitySet(points=pts[idx], residuals=res[idx], search_box=box,
                          merge_radius=merge_radius, warning=warning)


# ---------------------------------------------------------------------------
# axioms
# ---------------------------------------------------------------------------

@dataclass
class FitnessAxiomReport:
    max_diag_violation: float
    max_identity_violation: float
    worst_diag_point: np.ndarray
    worst_identity_point: np.ndarray


def check_fitness_axioms(model: FitnessModel, probes: int, seed: int,
                         box=None) -> FitnessAxiomReport:
    """Probe g(x,x) = 0 and the diagonal Hessian identity at random points.

    The identity H11 g + 2 H12 g + H22 g = 0 on the diagonal follows from
    differentiating g(x,x) = 0 twice; H12 is estimated by central differences
    of grad1 in the second slot and H22 by second differences of g, both
    anchored on the diagonal, so the check is independent of user-supplied
    second derivatives in those blocks.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    if box is None:
        box = np.tile(np.array([-2.0, 2.0]), (model.dim, 1))
    box = np.asarray(box, dtype=float)
    xs = rng.uniform(box[:, 0], box[:, 1], size=(probes, model.dim))

    worst_diag = 0.0
    worst_diag_pt = xs[0]
    worst_ident = 0.0
    worst_ident_pt = xs[0]
    d = model.dim
    for x in xs:
        try:
            gd = float(model.g(x, x))
        except Exception as e:
            raise ModelEvaluationError(f"g evaluation failed: {e}", point=x) from e
        if abs(gd) > worst_diag:
            worst_diag, worst_diag_pt = abs(gd), x

        h = model.fd_step * (1.0 + np.linalg.norm(x))
        H11 = np.atleast_2d(model.hess11(x, x))
        H12 = np.empty((d, d))
        H22 = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            H12[:, j] = (np.atleast_1d(model.grad1(x, x + h * e))
                         - np.atleast_1d(model.grad1(x, x - h * e))) / (2.0 * h)
        for j in range(d):
            ej = np.zeros(d)
            ej[j] = 1.0
            for k in range(j, d):
                ek = np.zeros(d)
                ek[k] = 1.0
                if j == k:
                    v = (float(model.g(x, x + h * ej)) - 2.0 * float(model.g(x, x))
                         + float(model.g(x, x - h * ej))) / h ** 2
                else:
                    v = (float(model.g(x, x + h * (ej + ek)))
                         - float(model.g(x, x + h * (ej - ek)))
                         - float(model.g(x, x + h * (ek - ej)))
                         + float(model.g(x, x - h * (ej + ek)))) / (4.0 * h ** 2)
                H22[j, k] = H22[k, j] = v
        resid = float(np.linalg.norm(H11 + 2.0 * H12 + H22))
        if resid > worst_ident:
            worst_ident, worst_ident_pt = resid, x

    return FitnessAxiomReport(max_diag_violation=worst_diag,
                              max_identity_violation=worst_ident,
                              worst_diag_point=worst_diag_pt,
                              worst_identity_point=worst_ident_pt)
