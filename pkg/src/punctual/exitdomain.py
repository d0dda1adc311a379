"""Monte Carlo harness for the problem of exit from an attracting domain.

For a domain G holding a single attracting singularity, paths started inside
G are run until they first cross the boundary; exit times (censored at a
horizon growing like 10 * exp(Vbar/eps)) and interpolated exit locations are
collected per noise level.  The headline statistics are the fraction of paths
outliving exp((Vbar - delta)/eps) and eps * log(median exit time), which the
exit-time theory predicts to approach Vbar from below as eps -> 0.  Only the
lower-bound direction is testable: no exit-time upper bound is available for
this degenerate model, so trends, not two-sided laws, are asserted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .coeff import CoefficientField
from .errors import NeedsFullPathError
from .models import as_point
from .sde import SimConfig, StopRule, Trajectory, TrajectorySummary, simulate_batch

__all__ = [
    "Domain",
    "domain_exit_stop",
    "ExitExperimentResult",
    "PerEpsStats",
    "run_exit_experiment",
    "excursion_decomposition",
    "check_attracting",
    "AttractingReport",
]


@dataclass
class Domain:
    """Bounded domain with a signed distance (negative inside) and boundary sampler."""

    kind: str
    dim: int
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    vertices: Optional[np.ndarray] = None

    @staticmethod
    def ball(center, radius: float) -> "Domain":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if radius <= 0:
            raise ValueError("radius must be positive")
        return Domain(kind="ball", dim=c.shape[0], center=c, radius=float(radius))

    @staticmethod
    def interval(lo: float, hi: float) -> "Domain":
        if not lo < hi:
            raise ValueError("need lo < hi")
        return Domain(kind="interval", dim=1, lo=float(lo), hi=float(hi))

    @staticmethod
    def polygon(vertices) -> "Domain":
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs at least 3 vertices in the plane")
        return Domain(kind="polygon", dim=2, vertices=v)

    # -- geometry ------------------------------------------------------------
    def signed_distance(self, x) -> np.ndarray:
        """Negative inside, zero on the boundary; 1-Lipschitz for all kinds."""
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return np.linalg.norm(x - self.center, axis=-1) - self.radius
        if self.kind == "interval":
            xv = x[..., 0]
            return np.maximum(self.lo - xv, xv - self.hi)
        # polygon: distance to edges, sign by crossing parity
        pts = np.atleast_2d(x)
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v                      # (m, 2)
        rel = pts[:, None, :] - v[None, :, :]               # (n, m, 2)
        t = np.clip(np.einsum("nmk,mk->nm", rel, e)
                    / np.maximum(np.einsum("mk,mk->m", e, e), 1e-300), 0.0, 1.0)
        proj = v[None] + t[..., None] * e[None]
        dist = np.min(np.linalg.norm(pts[:, None, :] - proj, axis=-1), axis=1)
        x1, y1 = v[:, 0], v[:, 1]
        x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
        px, py = pts[:, 0, None], pts[:, 1, None]
        crosses = ((y1 > py) != (y2 > py)) & \
            (px < (x2 - x1) * (py - y1) / np.where(y2 == y1, 1e-300, y2 - y1) + x1)
        inside = np.sum(crosses, axis=1) % 2 == 1
        sd = np.where(inside, -dist, dist)
        return sd if x.ndim > 1 else sd[0]

    def contains(self, x) -> np.ndarray:
        return self.signed_distance(x) < 0

    def boundary_sample(self, n: int, seed: int = 0) -> np.ndarray:
        """n stratified boundary points (deterministic given the seed)."""
        rng = np.random.default_rng(seed)
        if self.kind == "interval":
            pts = np.where(np.arange(n) % 2 == 0, self.lo, self.hi)
            return pts[:, None].astype(float)
        if self.kind == "ball":
            if self.dim == 2:
                theta = 2.0 * np.pi * (np.arange(n) + rng.uniform(0, 1, n)) / n
                u = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            else:
                u = rng.standard_normal((n, self.dim))
                u /= np.linalg.norm(u, axis=1, keepdims=True)
            return self.center + self.radius * u
        # polygon: stratify by arc length
        v = self.vertices
        seg = np.roll(v, -1, axis=0) - v
        lens = np.linalg.norm(seg, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(lens)])
        s = cum[-1] * (np.arange(n) + rng.uniform(0, 1, n)) / n
        idx = np.searchsorted(cum, s, side="right") - 1
        idx = np.clip(idx, 0, len(v) - 1)
        frac = (s - cum[idx]) / np.maximum(lens[idx], 1e-300)
        return v[idx] + frac[:, None] * seg[idx]


def domain_exit_stop(label: str, domain: Domain, terminal: bool = True) -> StopRule:
    """Triggers when the path reaches the boundary (signed distance >= 0)."""
    desc = None
    if domain.kind == "interval":
        desc = ("interval_exit", domain.lo, domain.hi)
    elif domain.kind == "ball":
        desc = ("ball_exit", tuple(domain.center), domain.radius)
    return StopRule(label, domain.signed_distance, terminal, desc)


# ---------------------------------------------------------------------------
# exit experiment
# ---------------------------------------------------------------------------

@dataclass
class PerEpsStats:
    eps: float
    n_paths: int
    exit_times: np.ndarray          # NaN where censored
    exit_points: np.ndarray         # NaN rows where censored
    censored: np.ndarray            # bool mask
    n_absorbed: int
    t_max: float
    threshold: float
    frac_exceeding_threshold: float
    eps_log_median: float
    all_censored: bool


@dataclass
class ExitExperimentResult:
    eps_values: list
    per_eps: list
    v_bar_used: float
    z_star_used: Optional[np.ndarray]
    delta: float
    x0: np.ndarray
    engine: str


def _fast_exit_batch(fld, domain, x0, eps, dt, t_max, tube, n_paths, seed, workers):
    from . import _kernels
    return _kernels.exit_batch(fld.fast_spec, domain, x0, eps, dt, t_max,
                               tube, n_paths, seed, workers)


def run_exit_experiment(fld: CoefficientField, domain: Domain, x0,
                        eps_values: Sequence[float], n_paths: int,
                        cfg_base: SimConfig, v_bar: float,
                        z_star=None, delta: Optional[float] = None,
                        workers: int = 1, use_fast: bool = True) -> ExitExperimentResult:
    """Exit times and locations across a descending grid of noise levels.

    For each eps the horizon is min(10 * exp(v_bar/eps), cfg_base.t_max); the
    threshold for the survival fraction is exp((v_bar - delta)/eps) with
    delta defaulting to 0.3 * v_bar.  Censored paths (including paths frozen
    on the singular set, which can never exit) are reported, never dropped.
    """
    x0 = as_point(x0, fld.dim)
    if float(domain.signed_distance(x0)) >= 0:
        raise ValueError("x0 must lie strictly inside the domain")
    if float(fld.gamma.distance(x0)) <= cfg_base.absorb_tube:
        raise ValueError("x0 must lie outside the absorption tube")
    eps_values = list(eps_values)
    if any(e <= 0 for e in eps_values) or \
            any(a <= b for a, b in zip(eps_values, eps_values[1:])):
        raise ValueError("eps_values must be positive and strictly descending")
    if delta is None:
        delta = 0.3 * v_bar

    fast_ok = (use_fast and fld.fast_spec is not None
               and ((domain.kind == "interval" and fld.dim == 1)
                    or (domain.kind == "ball" and fld.fast_spec["model"] == "radial2d")))
    engine = "compiled" if fast_ok else "vectorised"

    per = []
    for eps in eps_values:
        t_max = float(min(10.0 * np.exp(v_bar / eps), cfg_base.t_max))
        if fast_ok:
            times, points, absorbed = _fast_exit_batch(
                fld, domain, x0, eps, cfg_base.dt, t_max,
                cfg_base.absorb_tube, n_paths, cfg_base.seed, workers)
        else:
            cfg = SimConfig(eps=eps, dt=cfg_base.dt, t_max=t_max,
                            absorb_tube=cfg_base.absorb_tube, seed=cfg_base.seed)
            rule = domain_exit_stop("exit", domain)
            sums = simulate_batch(fld, x0, cfg, [rule], n_paths, workers)
            times = np.full(n_paths, np.nan)
            points = np.full((n_paths, fld.dim), np.nan)
            absorbed = np.zeros(n_paths, dtype=bool)
            for s in sums:
                e = s.first_event("exit")
                if e is not None:
                    times[s.path_index] = e.time
                    points[s.path_index] = e.point
                absorbed[s.path_index] = s.absorbed_at is not None

        censored = ~np.isfinite(times)
        thr = float(np.exp((v_bar - delta) / eps))
        # censored paths exceed the threshold whenever the horizon does
        exceeding = (times > thr) | (censored & (t_max >= thr))
        uncens = times[~censored]
        med = float(np.median(uncens)) if uncens.size else np.nan
        per.append(PerEpsStats(
            eps=eps, n_paths=n_paths, exit_times=times, exit_points=points,
            censored=censored, n_absorbed=int(absorbed.sum()), t_max=t_max,
            threshold=thr,
            frac_exceeding_threshold=float(np.mean(exceeding)),
            eps_log_median=float(eps * np.log(med)) if np.isfinite(med) else float("nan"),
            all_censored=bool(censored.all())))
    return ExitExperimentResult(eps_values=eps_values, per_eps=per,
                                v_bar_used=float(v_bar),
                                z_star_used=None if z_star is None else as_point(z_star),
                                delta=float(delta), x0=x0, engine=engine)


# ---------------------------------------------------------------------------
# excursions
# ---------------------------------------------------------------------------

def excursion_decomposition(traj, rho: float, two_rho: float,
                            center=None, domain: Optional[Domain] = None) -> list:
    """Alternating hitting times (theta_m, tau_m) of S(two_rho) and B(rho) u dG.

    theta_0 = 0; tau_m is the first time >= theta_m in the small ball around
    the singularity (or on the domain boundary); theta_{m+1} the next hit of
    the larger sphere.  Requires a stored trajectory.
    """
    if isinstance(traj, TrajectorySummary):
        if traj.path is None:
            raise NeedsFullPathError("excursion decomposition needs a stored path; "
                                     "re-run with store_stride > 0")
        traj = traj.path
    if not isinstance(traj, Trajectory):
        raise NeedsFullPathError("expected a Trajectory or a summary holding one")
    if not (0.0 < rho < two_rho):
        raise ValueError("need 0 < rho < two_rho")
    c = np.zeros(traj.points.shape[1]) if center is None else as_point(center)

    r = np.linalg.norm(traj.points - c, axis=1)
    on_boundary = np.zeros(len(r), dtype=bool)
    if domain is not None:
        on_boundary = domain.signed_distance(traj.points) >= -1e-12

    t = traj.times
    pairs = []
    i = 0
    theta = 0.0
    n = len(t)
    while True:
        # find tau_m: first index >= i with r <= rho or boundary
        hit = np.flatnonzero((r[i:] <= rho) | on_boundary[i:])
        if hit.size == 0:
            break
        j = i + int(hit[0])
        tau = float(t[j])
        pairs.append((float(theta), tau))
        if on_boundary[j]:
            break
        # find theta_{m+1}: first index > j with r >= two_rho
        out = np.flatnonzero(r[j + 1:] >= two_rho)
        if out.size == 0:
            break
        i = j + 1 + int(out[0])
        theta = float(t[i])
    return pairs


# ---------------------------------------------------------------------------
# attractivity check
# ---------------------------------------------------------------------------

@dataclass
class AttractingReport:
    ok: bool
    attracting: bool
    converging: bool
    n_escaped: int
    max_final_dist: float
    singularity: Optional[np.ndarray]


def check_attracting(fld: CoefficientField, domain: Domain, n_rays: int = 16,
                     t_horizon: float = 50.0, tol: float = 1e-2,
                     seed: int = 0) -> AttractingReport:
    """Integrate the noiseless flow xdot = b(x) from boundary and interior seeds.

    Reports whether every trajectory stays in the closed domain and ends near
    the interior singularity by the horizon.  This is a report, not an error:
    a failing domain is simply not attracting in the assumed sense.
    """
    inside = [p for p in fld.gamma.points if float(domain.signed_distance(p)) < 0]
    sing = inside[0] if len(inside) == 1 else None

    bnd = domain.boundary_sample(n_rays, seed)
    seeds = list(bnd)
    if sing is not None:
        seeds.extend(0.5 * (p + sing) for p in bnd[: max(1, n_rays // 2)])

    escaped = 0
    worst = 0.0
    for p in seeds:
        sol = solve_ivp(lambda t, x: fld.b(x), (0.0, t_horizon), np.asarray(p, float),
                        rtol=1e-8, atol=1e-10, dense_output=False, max_step=t_horizon / 50)
        xs = sol.y.T
        if np.any(domain.signed_distance(xs) > 1e-6):
            escaped += 1
        final = xs[-1]
        if sing is not None:
            worst = max(worst, float(np.linalg.norm(final - sing)))
        else:
            worst = np.inf
    attracting = escaped == 0
    converging = sing is not None and worst <= tol
    return AttractingReport(ok=attracting and converging, attracting=attracting,
                            converging=converging, n_escaped=escaped,
                            max_final_dist=worst, singularity=sing)
