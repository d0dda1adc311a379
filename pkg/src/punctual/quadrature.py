"""Deterministic quadrature for kernel moments and half-space selection integrals.

The drift/diffusion integrands carry a positive-part factor [grad . h]_+ whose
kink would wreck tensor rules, so every half-space integral is computed in a
rotated frame where the cut is axis-aligned and the kink disappears from the
integrand.  Gaussian kernels get Gauss-Legendre nodes against the explicit
normal weight on a truncated box (the tail beyond 8 sigma is ~1e-14);
custom kernels get polar/spherical rules on their declared support ball.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import QuadratureError

_TRUNC = 8.0  # Gaussian truncation in whitened units


@lru_cache(maxsize=64)
def _gl(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _gl_on(a: float, b: float, n: int):
    x, w = _gl(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def rotation_to_axis(u: np.ndarray) -> np.ndarray:
    """Orthonormal matrix whose first column is the unit vector u (Householder)."""
    u = np.asarray(u, dtype=float)
    d = u.shape[0]
    nu = np.linalg.norm(u)
    if nu == 0:
        raise ValueError("cannot align a zero vector")
    v = u / nu
    e = np.zeros(d)
    e[0] = 1.0
    w = v - e
    nw = np.linalg.norm(w)
    if nw < 1e-14:
        return np.eye(d)
    w /= nw
    return np.eye(d) - 2.0 * np.outer(w, w)


def _std_normal_weight(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


@lru_cache(maxsize=64)
def _gauss_halfspace_grid(dim: int, n: int):
    """Nodes/weights in whitened coordinates for {z1 > 0} against N(0, I)."""
    z1, w1 = _gl_on(0.0, _TRUNC, n)
    axes_z = [z1]
    axes_w = [w1 * _std_normal_weight(z1)]
    for _ in range(dim - 1):
        zf, wf = _gl_on(-_TRUNC, _TRUNC, n)
        axes_z.append(zf)
        axes_w.append(wf * _std_normal_weight(zf))
    grids = np.meshgrid(*axes_z, indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1)
    wt = np.prod(np.stack(np.meshgrid(*axes_w, indexing="ij"), axis=-1)
                 .reshape(-1, dim), axis=1)
    return z, wt


def gaussian_halfspace_nodes(kernel, w: np.ndarray, n: int = 80):
    """Physical nodes h and weights for integral over {h . w > 0} of f(h) p(h) dh.

    Works for both Gaussian kernel kinds; the half-space normal w need not be
    normalised.  Returns (h, weights) with h of shape (N, d).
    """
    d = kernel.dim
    w = np.asarray(w, dtype=float)
    if kernel.kind == "gaussian_isotropic":
        A = kernel.s * np.eye(d)
    elif kernel.kind == "gaussian_full":
        A = np.linalg.cholesky(kernel.K)
    else:
        raise ValueError("gaussian_halfspace_nodes requires a Gaussian kernel")
    # h = A z; {h.w > 0} = {z . A^T w > 0}
    u = A.T @ w
    Q = rotation_to_axis(u)
    z, wt = _gauss_halfspace_grid(d, n)
    h = z @ Q.T @ A.T
    return h, wt


def gaussian_fullspace_nodes(kernel, n: int = 80):
    """Physical nodes/weights for the full-space Gaussian integral of f(h) p(h) dh."""
    d = kernel.dim
    if kernel.kind == "gaussian_isotropic":
        A = kernel.s * np.eye(d)
    elif kernel.kind == "gaussian_full":
        A = np.linalg.cholesky(kernel.K)
    else:
        raise ValueError("gaussian_fullspace_nodes requires a Gaussian kernel")
    zf, wf = _gl_on(-_TRUNC, _TRUNC, n)
    wts = wf * _std_normal_weight(zf)
    grids = np.meshgrid(*([zf] * d), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1)
    wt = np.prod(np.stack(np.meshgrid(*([wts] * d), indexing="ij"), axis=-1)
                 .reshape(-1, d), axis=1)
    return z @ A.T, wt


@lru_cache(maxsize=64)
def _ball_grid(dim: int, radius: float, n_rad: int, n_ang: int, half: bool):
    """Nodes/weights over a ball (or the half-ball {h1 > 0}) in up to 3 dims."""
    if dim == 1:
        lo = 0.0 if half else -radius
        h, w = _gl_on(lo, radius, n_rad)
        return h[:, None], w
    if dim == 2:
        r, wr = _gl_on(0.0, radius, n_rad)
        t_lo, t_hi = (-0.5 * np.pi, 0.5 * np.pi) if half else (-np.pi, np.pi)
        t, wt = _gl_on(t_lo, t_hi, n_ang)
        R, T = np.meshgrid(r, t, indexing="ij")
        WR, WT = np.meshgrid(wr, wt, indexing="ij")
        h = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=-1)
        w = (WR * WT * R).ravel()
        return h, w
    if dim == 3:
        r, wr = _gl_on(0.0, radius, n_rad)
        c_lo = 0.0 if half else -1.0
        c, wc = _gl_on(c_lo, 1.0, n_ang)          # cos of angle to the cut axis
        p, wp = _gl_on(-np.pi, np.pi, n_ang)
        R, C, P = np.meshgrid(r, c, p, indexing="ij")
        WR, WC, WP = np.meshgrid(wr, wc, wp, indexing="ij")
        s = np.sqrt(1.0 - C ** 2)
        h = np.stack([(R * C).ravel(), (R * s * np.cos(P)).ravel(),
                      (R * s * np.sin(P)).ravel()], axis=-1)
        w = (WR * WC * WP * R ** 2).ravel()
        return h, w
    raise QuadratureError(f"ball quadrature implemented for d <= 3, got d={dim}")


def ball_nodes(dim: int, radius: float, n_rad: int = 64, n_ang: int = 64,
               u=None):
    """Nodes/weights over the support ball, optionally cut to {h . u > 0}."""
    half = u is not None
    h, w = _ball_grid(dim, float(radius), n_rad, n_ang, half)
    if half and dim > 1:
        Q = rotation_to_axis(np.asarray(u, dtype=float))
        h = h @ Q.T
    elif half and dim == 1:
        h = h * np.sign(float(np.asarray(u).ravel()[0]))
    return h, w


def ball_integral(f, dim: int, radius: float, n_rad: int = 64, n_ang: int = 64,
                  u=None):
    """Integrate f over the (half-)ball with a two-resolution error estimate."""
    h1, w1 = ball_nodes(dim, radius, n_rad, n_ang, u)
    v1 = np.tensordot(w1, np.asarray(f(h1), dtype=float), axes=1)
    h2, w2 = ball_nodes(dim, radius, n_rad + 16, n_ang + 16, u)
    v2 = np.tensordot(w2, np.asarray(f(h2), dtype=float), axes=1)
    return v2, float(np.max(np.abs(np.atleast_1d(v2 - v1))))
