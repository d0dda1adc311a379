"""Path action, Brownian controls, and quasi-potential optimisation.

The rate functional on a discrete path psi with nodes x_0..x_N is the
midpoint rule for

    1/2 int_0^{t_psi} (psid - b(psi))^T a^{-1}(psi) (psid - b(psi)) dt,

where t_psi is the first entry into a small tube around the singular set and
the path must be constant afterwards; violations get the +inf flag rather
than a regularised value.  a^{-1} is formed by eigendecomposition with an
eigenvalue floor of 1e-14 * trace(a), which doubles as a smooth barrier for
the optimiser.

The quasi-potential V(y, z) is estimated by minimising the discrete action
over interior nodes (quasi-Newton, with the gradient assembled from direct
differentiation of the midpoint rule) for each horizon in a geometric grid,
then refining around the best horizon.  Starts on the singular set are moved
to the best point of a small ring around it; the cost of reaching that ring
from (almost) the singularity is evaluated on an explicit connector path --
the time-reversed noiseless flow, a member of the radial family used by the
near-origin continuity construction -- and reported separately instead of
being assumed negligible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from .coeff import CoefficientField, sqrt_psd
from .errors import DegenerateSigmaError
from .exitdomain import Domain
from .models import as_point

__all__ = [
    "DiscretePath",
    "ActionValue",
    "QPOptions",
    "QuasiPotentialResult",
    "ExitCostResult",
    "action",
    "control_from_path",
    "integrate_S",
    "non_lsc_witness",
    "quasipotential",
    "exit_cost",
]

EIG_FLOOR_REL = 1e-14


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------

@dataclass
class DiscretePath:
    """Time grid plus points; the carrier for action evaluation."""

    times: np.ndarray
    points: np.ndarray
    t_psi_index: Optional[int] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] != self.times.shape[0]:
            raise ValueError("times and points must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @staticmethod
    def line(x_from, x_to, T: float, n_nodes: int) -> "DiscretePath":
        x_from = np.atleast_1d(np.asarray(x_from, float))
        x_to = np.atleast_1d(np.asarray(x_to, float))
        t = np.linspace(0.0, T, n_nodes + 1)
        lam = (t / T)[:, None]
        return DiscretePath(t, (1 - lam) * x_from + lam * x_to)

    @staticmethod
    def from_samples(times, points) -> "DiscretePath":
        return DiscretePath(np.asarray(times, float), np.asarray(points, float))


@dataclass
class ActionValue:
    value: float
    quadrature_error: float
    reason: Optional[str] = None

    @property
    def infinite(self) -> bool:
        return not np.isfinite(self.value)


def _inv_floored(a: np.ndarray):
    """Floored inverse of a batch of symmetric PSD matrices (and the floor used)."""
    w, v = np.linalg.eigh(a)
    tr = np.clip(np.trace(a, axis1=-2, axis2=-1), 1e-300, None)
    floor = EIG_FLOOR_REL * tr
    w = np.maximum(w, floor[..., None])
    inv = np.einsum("...ij,...j,...kj->...ik", v, 1.0 / w, v)
    return inv, floor


def _tube_entry_index(fld: CoefficientField, pts: np.ndarray, tube: float):
    dist = fld.gamma.distance(pts)
    inside = np.flatnonzero(dist <= tube)
    return (int(inside[0]) if inside.size else None), dist


def _midpoint_value(fld: CoefficientField, times, pts, stop: int) -> float:
    dt = np.diff(times[: stop + 1])
    mids = 0.5 * (pts[1: stop + 1] + pts[:stop])
    vel = (pts[1: stop + 1] - pts[:stop]) / dt[:, None]
    r = fld._eval(mids, ("b", "a"))
    res = vel - r["b"]
    inv, _ = _inv_floored(r["a"])
    quad = np.einsum("ni,nij,nj->n", res, inv, res)
    return float(0.5 * np.sum(quad * dt))


def action(fld: CoefficientField, psi: DiscretePath, tube: float = 1e-6) -> ActionValue:
    """Midpoint-rule action of a discrete path, with the +inf domain semantics.

    The value is flagged infinite when the path is not constant after first
    entering the tube around the singular set, or when an evaluation midpoint
    falls inside the tube before that entry.  The quadrature error estimate
    compares the fine grid against its 2x decimation.
    """
    pts, times = psi.points, psi.times
    n = len(times) - 1
    i_star, _ = _tube_entry_index(fld, pts, tube)
    if psi.t_psi_index is not None and (i_star is None or psi.t_psi_index <= i_star):
        i_star = psi.t_psi_index
    stop = n if i_star is None else i_star
    if i_star is not None:
        tail = pts[i_star:]
        scale = 1.0 + np.max(np.abs(pts))
        if np.max(np.linalg.norm(tail - pts[i_star], axis=1)) > 1e-12 * scale:
            return ActionValue(np.inf, 0.0, "path not constant after entering the tube")
    if stop == 0:
        return ActionValue(0.0, 0.0)
    mids = 0.5 * (pts[1: stop + 1] + pts[:stop])
    mdist = fld.gamma.distance(mids)
    if np.any(mdist <= tube):
        return ActionValue(np.inf, 0.0, "evaluation midpoint inside the tube")

    fine = _midpoint_value(fld, times, pts, stop)
    if stop >= 4:
        k = stop - (stop % 2)
        idx = np.arange(0, k + 1, 2)
        coarse = _midpoint_value(fld, times[idx], pts[idx], len(idx) - 1)
        if k < stop:
            coarse += _midpoint_value(fld, times[k: stop + 1], pts[k: stop + 1],
                                      stop - k)
        err = abs(fine - coarse) / 3.0
    else:
        err = np.nan
    return ActionValue(fine, err)


# ---------------------------------------------------------------------------
# controls
# ---------------------------------------------------------------------------

def control_from_path(fld: CoefficientField, psi: DiscretePath,
                      tube: float = 1e-6):
    """Recover the Brownian control phi with phid = sigma^{-1}(psi)(psid - b).

    Returns (phi, j_value) where j_value is the Schilder functional
    1/2 int |phid|^2; phi starts at 0 and is constant after the tube entry.
    """
    val = action(fld, psi, tube)
    if val.infinite:
        raise ValueError(f"control recovery needs a finite-action path: {val.reason}")
    pts, times = psi.points, psi.times
    n = len(times) - 1
    i_star, _ = _tube_entry_index(fld, pts, tube)
    stop = n if i_star is None else i_star

    dt = np.diff(times[: stop + 1])
    mids = 0.5 * (pts[1: stop + 1] + pts[:stop])
    vel = (pts[1: stop + 1] - pts[:stop]) / dt[:, None]
    r = fld._eval(mids, ("b", "a"))
    w, v = np.linalg.eigh(r["a"])
    tr = np.clip(np.trace(r["a"], axis1=-2, axis2=-1), 1e-300, None)
    bad = w[:, 0] <= EIG_FLOOR_REL * tr
    if np.any(bad):
        raise DegenerateSigmaError("sigma numerically singular off the tube",
                                   point=mids[int(np.flatnonzero(bad)[0])])
    inv_sqrt = np.einsum("nij,nj,nkj->nik", v, 1.0 / np.sqrt(w), v)
    phid = np.einsum("nij,nj->ni", inv_sqrt, vel - r["b"])
    j_value = float(0.5 * np.sum(np.sum(phid * phid, axis=1) * dt))

    phi_pts = np.zeros_like(pts)
    phi_pts[1: stop + 1] = np.cumsum(phid * dt[:, None], axis=0)
    phi_pts[stop + 1:] = phi_pts[stop]
    phi = DiscretePath(times.copy(), phi_pts,
                       t_psi_index=None if i_star is None else i_star)
    return phi, j_value


def integrate_S(fld: CoefficientField, x0, phi: DiscretePath,
                tube: float = 1e-6, substeps: int = 1) -> DiscretePath:
    """Solve ydot = b(y) + sigma(y) phid on the control's grid (RK4).

    phid is taken piecewise constant per segment.  The solution freezes on
    first entry into the tube, mirroring the frozen-after-absorption
    convention of the simulated process.
    """
    x0 = as_point(x0, fld.dim)
    if np.linalg.norm(phi.points[0]) > 1e-12:
        raise ValueError("control paths must start at 0")
    times = phi.times
    pts = np.empty((len(times), fld.dim))
    pts[0] = x0
    frozen_at = None
    if float(fld.gamma.distance(x0)) <= tube:
        frozen_at = 0

    def rhs(yv, u):
        b = fld.b(yv)
        sig = sqrt_psd(fld.a(yv))
        return b + sig @ u

    y = x0.copy()
    for i in range(len(times) - 1):
        if frozen_at is not None:
            pts[i + 1] = pts[frozen_at]
            continue
        dt_seg = (times[i + 1] - times[i]) / substeps
        u = (phi.points[i + 1] - phi.points[i]) / (times[i + 1] - times[i])
        for _ in range(substeps):
            k1 = rhs(y, u)
            k2 = rhs(y + 0.5 * dt_seg * k1, u)
            k3 = rhs(y + 0.5 * dt_seg * k2, u)
            k4 = rhs(y + dt_seg * k3, u)
            y = y + dt_seg / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        pts[i + 1] = y
        if float(fld.gamma.distance(y)) <= tube:
            frozen_at = i + 1
    return DiscretePath(times.copy(), pts, t_psi_index=frozen_at)


# ---------------------------------------------------------------------------
# the non-lsc witness
# ---------------------------------------------------------------------------

def non_lsc_witness(fld: CoefficientField, x0, n_values: Sequence[int],
                    T: float = 1.0, n_nodes: int = 4000, tube: float = 1e-6):
    """The parabola-through-the-singularity path and its plateaued approximants.

    psi(t) = (1 - 2t/T)^2 x0 crosses the singular set non-constantly at T/2,
    so its action is flagged infinite, while each psi_n (held flat on
    [T/2 - 1/n, T/2 + 1/n] at the approach value) has finite action.  The
    returned sequence exhibits the lower-semicontinuity failure.
    """
    x0 = as_point(x0, fld.dim)
    for n in n_values:
        if n <= 2.0 / T:
            raise ValueError(f"need n > 2/T for the plateau to be interior (n={n})")
    t = np.linspace(0.0, T, n_nodes + 1)
    prof = (1.0 - 2.0 * t / T) ** 2
    psi = DiscretePath(t, prof[:, None] * x0)
    i_limit = action(fld, psi, tube)

    seq = []
    for n in n_values:
        lo, hi = T / 2.0 - 1.0 / n, T / 2.0 + 1.0 / n
        hold = (1.0 - 2.0 * lo / T) ** 2
        prof_n = np.where((t >= lo) & (t <= hi), hold, prof)
        val = action(fld, DiscretePath(t, prof_n[:, None] * x0), tube)
        seq.append(val.value)
    return {"i_limit_path": i_limit, "i_sequence": seq}


# ---------------------------------------------------------------------------
# discrete action objective with gradient
# ---------------------------------------------------------------------------

def _objective_and_grad(fld: CoefficientField, times: np.ndarray,
                        pts: np.ndarray):
    """Floored midpoint action and its gradient w.r.t. interior nodes.

    The gradient differentiates the midpoint rule directly; the b and a
    midpoint derivatives are central differences batched over all segments.
    """
    n, d = pts.shape[0] - 1, pts.shape[1]
    dt = np.diff(times)
    mids = 0.5 * (pts[1:] + pts[:-1])
    vel = (pts[1:] - pts[:-1]) / dt[:, None]
    r = fld._eval(mids, ("b", "a"))
    res = vel - r["b"]
    inv, _ = _inv_floored(r["a"])
    w = np.einsum("nij,nj->ni", inv, res)
    value = float(0.5 * np.sum(np.einsum("ni,ni->n", res, w) * dt))

    h = 1e-6 * (1.0 + np.linalg.norm(mids, axis=1))
    probe = np.empty((2 * d, n, d))
    for j in range(d):
        probe[2 * j] = mids
        probe[2 * j][:, j] += h
        probe[2 * j + 1] = mids
        probe[2 * j + 1][:, j] -= h
    rp = fld._eval(probe.reshape(-1, d), ("b", "a"))
    bp = rp["b"].reshape(2 * d, n, d)
    ap = rp["a"].reshape(2 * d, n, d, d)

    G = np.zeros((n, d))
    for j in range(d):
        jb_col = (bp[2 * j] - bp[2 * j + 1]) / (2.0 * h[:, None])     # db/dm_j
        da_j = (ap[2 * j] - ap[2 * j + 1]) / (2.0 * h[:, None, None])
        G[:, j] = dt * (-np.einsum("ni,ni->n", jb_col, w)
                        - 0.5 * np.einsum("ni,nij,nj->n", w, da_j, w))

    grad = np.zeros_like(pts)
    grad[1:] += w
    grad[:-1] -= w
    grad[1:] += 0.5 * G
    grad[:-1] += 0.5 * G
    return value, grad[1:-1]


def _minimize_fixed_T(fld, y0, z, T, n_nodes, max_iters, tol, init=None):
    y0 = np.atleast_1d(np.asarray(y0, float))
    z = np.atleast_1d(np.asarray(z, float))
    times = np.linspace(0.0, T, n_nodes + 1)
    if init is None:
        lam = (times / T)[:, None]
        init = (1 - lam) * y0 + lam * z
    interior0 = init[1:-1].ravel().copy()
    d = fld.dim

    def fun(flat):
        pts = np.vstack([y0, flat.reshape(-1, d), z])
        v, g = _objective_and_grad(fld, times, pts)
        return v, g.ravel()

    out = minimize(fun, interior0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iters, "ftol": tol, "gtol": 1e-10})
    pts = np.vstack([y0, out.x.reshape(-1, d), z])
    return float(out.fun), DiscretePath(times, pts), bool(out.success)


# ---------------------------------------------------------------------------
# quasipotential
# ---------------------------------------------------------------------------

@dataclass
class QPOptions:
    n_nodes: int = 100
    t_grid: Optional[Sequence[float]] = None
    n_t: int = 8
    max_iters: int = 500
    tol: float = 1e-10
    origin_rho: Optional[float] = None
    tube: float = 1e-6
    ring_candidates: int = 16
    refine_rounds: int = 2


@dataclass
class QuasiPotentialResult:
    start: np.ndarray
    end: np.ndarray
    value: float
    path: DiscretePath
    t_star: float
    connector_cost_bound: float
    converged: bool
    per_t: list = field(default_factory=list)
    ring_point: Optional[np.ndarray] = None


def _default_t_grid(fld, y0, z, n_t):
    probe = DiscretePath.line(y0, z, 1.0, 32)
    mids = 0.5 * (probe.points[1:] + probe.points[:-1])
    speed = np.linalg.norm(fld.b(mids), axis=1)
    v_bar = max(float(np.mean(speed)), 1e-3)
    t0 = max(float(np.linalg.norm(np.subtract(z, y0))) / v_bar, 1e-2)
    return np.geomspace(t0 / 4.0, t0 * 8.0, n_t)


def _connector(fld: CoefficientField, y_c: np.ndarray, direction: np.ndarray,
               rho: float, tube: float):
    """Path from (almost) the singularity out to the ring along the reversed flow.

    Integrates ydot = -b(y) from y_c + r0*u until it reaches radius rho;
    falls back to the forward flow for repelling singularities.  Returns
    (path, end_point) or (None, ring point) if neither flow escapes.
    """
    r0 = max(2.0 * tube, 1e-3 * rho)
    start = y_c + r0 * direction

    def escape(t, x):
        return np.linalg.norm(x - y_c) - rho
    escape.terminal = True
    escape.direction = 1.0

    for sign in (-1.0, 1.0):
        sol = solve_ivp(lambda t, x: sign * fld.b(x), (0.0, 1e4), start,
                        events=escape, dense_output=True,
                        rtol=1e-10, atol=1e-12, max_step=5.0)
        if sol.t_events[0].size:
            t_end = float(sol.t_events[0][0])
            ts = np.linspace(0.0, t_end, 256)
            ys = sol.sol(ts).T
            end = y_c + rho * (ys[-1] - y_c) / np.linalg.norm(ys[-1] - y_c)
            ys[-1] = end
            return DiscretePath(ts, ys), end
    return None, y_c + rho * direction


def quasipotential(fld: CoefficientField, y, z,
                   opts: Optional[QPOptions] = None) -> QuasiPotentialResult:
    """Minimum-action estimate of V(y, z) = inf over horizons and paths.

    If y sits on the singular set the optimisation starts from the best point
    of the ring S(y, origin_rho), preselected by a cheap straight-line scan,
    and the reported value adds the quadrature-evaluated cost of the explicit
    connector from (almost) y to that ring point.
    """
    opts = opts or QPOptions()
    y = as_point(y, fld.dim)
    z = as_point(z, fld.dim)
    if float(fld.gamma.distance(z)) <= opts.tube:
        raise ValueError("target z lies in the singular tube")

    connector_path = None
    connector_cost = 0.0
    ring_point = None
    y_start = y
    if float(fld.gamma.distance(y)) <= opts.tube:
        y_c = fld.gamma.nearest(y)
        rho = opts.origin_rho or 0.05 * float(np.linalg.norm(z - y_c))
        if rho <= opts.tube:
            raise ValueError("origin_rho must exceed the tube radius")
        # ring preselection by straight-line action
        if fld.dim == 1:
            dirs = [np.array([1.0]), np.array([-1.0])]
        else:
            k = max(4, opts.ring_candidates)
            if fld.dim == 2:
                ang = 2.0 * np.pi * np.arange(k) / k
                dirs = [np.array([np.cos(a), np.sin(a)]) for a in ang]
            else:
                rng = np.random.default_rng(0)
                dirs = [u / np.linalg.norm(u)
                        for u in rng.standard_normal((k, fld.dim))]
                dirs.append((z - y_c) / np.linalg.norm(z - y_c))
        t_probe = float(np.median(_default_t_grid(fld, y_c + rho * dirs[0], z, 3)))
        best_dir, best_score = None, np.inf
        for u in dirs:
            p = y_c + rho * u
            line = DiscretePath.line(p, z, t_probe, 48)
            score = _midpoint_value(fld, line.times, line.points, 48)
            if score < best_score:
                best_dir, best_score = u, score
        connector_path, y_start = _connector(fld, y_c, best_dir, rho, opts.tube)
        ring_point = y_start
        if connector_path is not None:
            connector_cost = action(fld, connector_path, opts.tube).value
            if not np.isfinite(connector_cost):
                connector_cost = 0.0
                connector_path = None

    t_grid = np.asarray(opts.t_grid, float) if opts.t_grid is not None \
        else _default_t_grid(fld, y_start, z, opts.n_t)
    per_t = []
    best = None
    for T in t_grid:
        v, path, okflag = _minimize_fixed_T(fld, y_start, z, T, opts.n_nodes,
                                            opts.max_iters, opts.tol)
        per_t.append((float(T), v))
        if best is None or v < best[0]:
            best = (v, path, okflag, float(T))

    # geometric refinement around the best horizon
    ts = sorted(t_grid)
    for _ in range(opts.refine_rounds):
        v0, _, _, T0 = best
        i = ts.index(T0) if T0 in ts else min(range(len(ts)),
                                              key=lambda j: abs(ts[j] - T0))
        cands = []
        if i > 0:
            cands.append(math.sqrt(ts[i] * ts[i - 1]))
        if i < len(ts) - 1:
            cands.append(math.sqrt(ts[i] * ts[i + 1]))
        for T in cands:
            v, path, okflag = _minimize_fixed_T(fld, y_start, z, T, opts.n_nodes,
                                                opts.max_iters, opts.tol)
            per_t.append((float(T), v))
            ts = sorted(ts + [T])
            if v < best[0]:
                best = (v, path, okflag, float(T))

    v_best, path_best, conv, t_star = best
    if connector_path is not None:
        t_shift = connector_path.times[-1]
        times = np.concatenate([connector_path.times,
                                path_best.times[1:] + t_shift])
        pts = np.vstack([connector_path.points, path_best.points[1:]])
        full = DiscretePath(times, pts)
    else:
        full = path_best
    return QuasiPotentialResult(start=y, end=z, value=float(v_best + connector_cost),
                                path=full, t_star=t_star,
                                connector_cost_bound=float(connector_cost),
                                converged=conv, per_t=per_t, ring_point=ring_point)


# ---------------------------------------------------------------------------
# exit cost over a domain boundary
# ---------------------------------------------------------------------------

@dataclass
class ExitCostResult:
    v_bar: float
    z_star: np.ndarray
    boundary_profile: list          # (point, value, converged)
    attracting_warning: bool
    singularity: np.ndarray


def exit_cost(fld: CoefficientField, domain: Domain,
              opts: Optional[QPOptions] = None, n_boundary: int = 24,
              seed: int = 0, workers: int = 1) -> ExitCostResult:
    """Quasi-potential profile over the boundary and its minimiser z*.

    The domain must contain exactly one singularity.  A cheap drift probe on
    rays flags (without failing) domains where b does not point back toward
    the singularity.
    """
    opts = opts or QPOptions()
    inside = [p for p in fld.gamma.points if float(domain.signed_distance(p)) < 0]
    if len(inside) != 1:
        raise ValueError(f"domain must contain exactly one singularity, found {len(inside)}")
    sing = inside[0]

    warning = False
    bnd_probe = domain.boundary_sample(max(8, n_boundary // 2), seed + 1)
    for p in bnd_probe:
        for frac in (0.3, 0.6, 0.9):
            x = sing + frac * (p - sing)
            if float(np.dot(fld.b(x), x - sing)) > 1e-10:
                warning = True

    pts = domain.boundary_sample(n_boundary, seed)

    def solve(p):
        res = quasipotential(fld, sing, p, opts)
        return (p, res.value, res.converged)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as ex:
            profile = list(ex.map(solve, pts))
    else:
        profile = [solve(p) for p in pts]
    values = np.array([v for (_, v, _) in profile])
    i = int(np.argmin(values))
    return ExitCostResult(v_bar=float(values[i]), z_star=profile[i][0],
                          boundary_profile=profile, attracting_warning=warning,
                          singularity=sing)
