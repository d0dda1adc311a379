"""Euler-Maruyama simulation of the singular trait diffusion.

The process follows dX = (b + eps*bt) dt + sqrt(eps) sigma dW until it enters
a small tube around the singular set, after which it is frozen in place --
the canonical construction of a solution that is constant after the hitting
time.  The scheme is explicit Euler-Maruyama; the tube excision keeps every
evaluated coefficient in the region where they are locally Lipschitz, which
is the same device the existence construction uses.

Noise streams are counter-based (Philox) and derived per path from
(seed, path_index), so batch results are identical for any worker count and
any batching of the same paths.

Crossing times of stop rules are resolved by linear interpolation inside the
step; the O(sqrt(dt)) boundary-overshoot bias of that choice is documented
rather than corrected.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coeff import CoefficientField
from .errors import ModelEvaluationError, NumericalBlowupError
from .models import as_point

__all__ = [
    "SimConfig",
    "StopRule",
    "Trajectory",
    "TrajectorySummary",
    "sphere_hit_stop",
    "sphere_exit_stop",
    "level_stop",
    "simulate",
    "simulate_batch",
    "hitting_time_stats",
    "path_rng",
]

_CHUNK = 4096  # noise steps generated per RNG call


@dataclass
class SimConfig:
    """Knobs of a single simulation run."""

    eps: float
    dt: float
    t_max: float
    absorb_tube: float = 1e-5
    seed: int = 0
    path_index: int = 0

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.dt <= 0 or self.t_max <= 0 or self.dt > self.t_max:
            raise ValueError("need 0 < dt <= t_max")
        if self.absorb_tube <= 1e-8:
            raise ValueError("absorb_tube must exceed the 1e-8 root residual tolerance")


@dataclass
class StopRule:
    """Scalar level crossing: triggers the first time fn(x) >= 0.

    ``fn`` must be vectorised over a leading batch axis.  ``descriptor`` is an
    optional structured form that compiled fast paths can recognise.
    """

    label: str
    fn: Callable[[np.ndarray], np.ndarray]
    terminal: bool = True
    descriptor: Optional[tuple] = None


def sphere_hit_stop(label: str, center, radius: float, terminal: bool = True) -> StopRule:
    """Triggers when the path enters the closed ball of given center/radius."""
    c = np.asarray(center, dtype=float)

    def fn(x):
        return radius - np.linalg.norm(np.asarray(x, float) - c, axis=-1)

    return StopRule(label, fn, terminal, ("sphere_hit", tuple(c), float(radius)))


def sphere_exit_stop(label: str, center, radius: float, terminal: bool = True) -> StopRule:
    """Triggers when the path leaves the open ball of given center/radius."""
    c = np.asarray(center, dtype=float)

    def fn(x):
        return np.linalg.norm(np.asarray(x, float) - c, axis=-1) - radius

    return StopRule(label, fn, terminal, ("sphere_exit", tuple(c), float(radius)))


def level_stop(label: str, fn, terminal: bool = True) -> StopRule:
    return StopRule(label, fn, terminal, None)


@dataclass
class Event:
    time: float
    label: str
    point: np.ndarray


@dataclass
class Trajectory:
    """A stored path on its time grid, frozen after absorption."""

    times: np.ndarray
    points: np.ndarray
    absorbed_at: Optional[float] = None
    exit_events: list = field(default_factory=list)

    @property
    def terminal(self) -> np.ndarray:
        return self.points[-1]

    def first_event(self, label: str) -> Optional[Event]:
        for e in self.exit_events:
            if e.label == label:
                return e
        return None


@dataclass
class TrajectorySummary:
    path_index: int
    terminal: np.ndarray
    t_end: float
    absorbed_at: Optional[float]
    exit_events: list
    labels: tuple
    path: Optional[Trajectory] = None

    def first_event(self, label: str) -> Optional[Event]:
        for e in self.exit_events:
            if e.label == label:
                return e
        return None


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based per-path stream; identical for any scheduling of paths."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, path_index))))


# ---------------------------------------------------------------------------
# single path
# ---------------------------------------------------------------------------

def simulate(fld: CoefficientField, x0, cfg: SimConfig,
             stops: Sequence[StopRule] = ()) -> Trajectory:
    """Simulate one path, recording the full grid.

    The path is frozen the first time it comes within ``cfg.absorb_tube`` of
    the singular set (grid-resolved absorption time), and truncated at the
    interpolated crossing time of the first triggered terminal stop rule.
    """
    x0 = as_point(x0, fld.dim)
    n_steps = int(round(cfg.t_max / cfg.dt))
    times = np.arange(n_steps + 1) * cfg.dt
    pts = np.empty((n_steps + 1, fld.dim))
    pts[0] = x0
    events: list[Event] = []
    fired = set()

    # immediate triggers / absorbed start
    for rule in stops:
        if float(rule.fn(x0)) >= 0.0:
            events.append(Event(0.0, rule.label, x0.copy()))
            fired.add(rule.label)
            if rule.terminal:
                return Trajectory(times[:1], pts[:1].copy(), None, events)
    if float(fld.gamma.distance(x0)) <= cfg.absorb_tube:
        pts[:] = x0
        return Trajectory(times, pts, 0.0, events)

    rng = path_rng(cfg.seed, cfg.path_index)
    sq_eps_dt = np.sqrt(cfg.eps * cfg.dt)
    x = x0.copy()
    fvals = {r.label: float(r.fn(x)) for r in stops}
    noise = None
    used = 0
    for n in range(n_steps):
        if noise is None or used >= noise.shape[0]:
            noise = rng.standard_normal((_CHUNK, fld.dim))
            used = 0
        try:
            drift, sig = fld.drift_diffusion(x, cfg.eps)
        except Exception as e:
            raise ModelEvaluationError(
                f"coefficient evaluation failed at step {n}: {e}", point=x) from e
        xn = x + drift * cfg.dt + sq_eps_dt * (sig @ noise[used])
        used += 1
        if not np.all(np.isfinite(xn)):
            raise NumericalBlowupError(f"non-finite state at step {n}")

        stop_here = None
        for rule in stops:
            if rule.label in fired and not rule.terminal:
                continue
            fo = fvals[rule.label]
            fn_ = float(rule.fn(xn))
            fvals[rule.label] = fn_
            if rule.label in fired:
                continue
            if fn_ >= 0.0 > fo:
                frac = fo / (fo - fn_)
                t_cross = times[n] + frac * cfg.dt
                p_cross = x + frac * (xn - x)
                events.append(Event(t_cross, rule.label, p_cross))
                fired.add(rule.label)
                if rule.terminal and stop_here is None:
                    stop_here = (t_cross, p_cross)
        if stop_here is not None:
            t_cross, p_cross = stop_here
            out_t = np.append(times[: n + 1], t_cross)
            out_p = np.vstack([pts[: n + 1], p_cross])
            return Trajectory(out_t, out_p, None, events)

        pts[n + 1] = xn
        if float(fld.gamma.distance(xn)) <= cfg.absorb_tube:
            pts[n + 1:] = xn          # frozen after the hitting time
            return Trajectory(times, pts, times[n + 1], events)
        x = xn
    return Trajectory(times, pts, None, events)


# ---------------------------------------------------------------------------
# batches (vectorised synchronous engine)
# ---------------------------------------------------------------------------

def simulate_batch(fld: CoefficientField, x0, cfg: SimConfig,
                   stops: Sequence[StopRule] = (), n_paths: int = 1,
                   workers: int = 1, store_stride: int = 0) -> list:
    """Simulate n_paths independent paths; returns TrajectorySummary list.

    Path i uses the (cfg.seed, i) noise stream.  The engine steps all live
    paths synchronously with batched coefficient evaluation; results do not
    depend on ``workers`` (accepted for interface compatibility with the
    compiled per-path engines).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    x0 = as_point(x0, fld.dim)
    d = fld.dim
    n_steps = int(round(cfg.t_max / cfg.dt))
    labels = tuple(r.label for r in stops)

    x = np.tile(x0, (n_paths, 1))
    alive = np.ones(n_paths, dtype=bool)
    absorbed_at = np.full(n_paths, np.nan)
    t_end = np.full(n_paths, np.nan)
    terminal = np.tile(x0, (n_paths, 1))
    events: list[list[Event]] = [[] for _ in range(n_paths)]
    fired = np.zeros((n_paths, len(stops)), dtype=bool)

    store = store_stride > 0
    if store:
        n_keep = n_steps // store_stride + 2
        hist = np.full((n_paths, n_keep, d), np.nan)
        hist_t = np.full((n_paths, n_keep), np.nan)
        hist[:, 0] = x0
        hist_t[:, 0] = 0.0
        hist_n = np.ones(n_paths, dtype=int)

    # immediate triggers at t = 0
    for j, rule in enumerate(stops):
        if float(rule.fn(x0)) >= 0.0:
            fired[:, j] = True
            for i in range(n_paths):
                events[i].append(Event(0.0, rule.label, x0.copy()))
            if rule.terminal:
                alive[:] = False
                t_end[:] = 0.0
    if alive.any() and float(fld.gamma.distance(x0)) <= cfg.absorb_tube:
        absorbed_at[alive] = 0.0
        t_end[alive] = cfg.t_max
        alive[:] = False

    rngs = [path_rng(cfg.seed, i) for i in range(n_paths)]
    buf = np.empty((n_paths, _CHUNK, d))
    buf_used = _CHUNK
    fvals = np.empty((n_paths, len(stops)))
    for j, rule in enumerate(stops):
        fvals[:, j] = rule.fn(x)
    sq_eps_dt = np.sqrt(cfg.eps * cfg.dt)

    for n in range(n_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        if buf_used >= _CHUNK:
            for i in range(n_paths):
                if alive[i]:
                    buf[i] = rngs[i].standard_normal((_CHUNK, d))
            buf_used = 0
        xi = x[idx]
        drift, sig = fld.drift_diffusion(xi, cfg.eps)
        noise = buf[idx, buf_used]
        xn = xi + drift * cfg.dt + sq_eps_dt * np.einsum("nij,nj->ni", sig, noise)
        buf_used += 1
        if not np.all(np.isfinite(xn)):
            bad = idx[~np.all(np.isfinite(xn), axis=1)][0]
            raise NumericalBlowupError(f"non-finite state at step {n}, path {bad}")

        stop_t = np.full(idx.size, np.inf)
        stop_p = np.empty((idx.size, d))
        for j, rule in enumerate(stops):
            fo = fvals[idx, j]
            fn_ = np.asarray(rule.fn(xn), dtype=float)
            fvals[idx, j] = fn_
            crossing = (fn_ >= 0.0) & (fo < 0.0) & ~fired[idx, j]
            if not crossing.any():
                continue
            frac = fo[crossing] / (fo[crossing] - fn_[crossing])
            t_cross = n * cfg.dt + frac * cfg.dt
            p_cross = xi[crossing] + frac[:, None] * (xn[crossing] - xi[crossing])
            for m, i_local in enumerate(np.flatnonzero(crossing)):
                i = idx[i_local]
                events[i].append(Event(float(t_cross[m]), rule.label, p_cross[m]))
                fired[i, j] = True
                if rule.terminal and t_cross[m] < stop_t[i_local]:
                    stop_t[i_local] = t_cross[m]
                    stop_p[i_local] = p_cross[m]

        x[idx] = xn
        stopped = np.isfinite(stop_t)
        if stopped.any():
            gi = idx[stopped]
            terminal[gi] = stop_p[stopped]
            t_end[gi] = stop_t[stopped]
            alive[gi] = False
            if store:
                for i, p, t in zip(gi, stop_p[stopped], stop_t[stopped]):
                    hist[i, hist_n[i]] = p
                    hist_t[i, hist_n[i]] = t
                    hist_n[i] += 1

        still = idx[~stopped]
        if still.size:
            dist = fld.gamma.distance(x[still])
            hit = dist <= cfg.absorb_tube
            if hit.any():
                gi = still[hit]
                absorbed_at[gi] = (n + 1) * cfg.dt
                terminal[gi] = x[gi]
                t_end[gi] = cfg.t_max
                alive[gi] = False
                if store:
                    for i in gi:
                        hist[i, hist_n[i]] = x[i]
                        hist_t[i, hist_n[i]] = (n + 1) * cfg.dt
                        hist_n[i] += 1
        if store and (n + 1) % store_stride == 0:
            live = np.flatnonzero(alive)
            for i in live:
                hist[i, hist_n[i]] = x[i]
                hist_t[i, hist_n[i]] = (n + 1) * cfg.dt
                hist_n[i] += 1

    live = np.flatnonzero(alive)
    terminal[live] = x[live]
    t_end[live] = n_steps * cfg.dt
    if store:
        for i in live:
            if hist_t[i, hist_n[i] - 1] != n_steps * cfg.dt:
                hist[i, hist_n[i]] = x[i]
                hist_t[i, hist_n[i]] = n_steps * cfg.dt
                hist_n[i] += 1

    out = []
    for i in range(n_paths):
        traj = None
        if store:
            k = hist_n[i]
            traj = Trajectory(hist_t[i, :k].copy(), hist[i, :k].copy(),
                              None if np.isnan(absorbed_at[i]) else float(absorbed_at[i]),
                              events[i])
        out.append(TrajectorySummary(
            path_index=i, terminal=terminal[i].copy(), t_end=float(t_end[i]),
            absorbed_at=None if np.isnan(absorbed_at[i]) else float(absorbed_at[i]),
            exit_events=events[i], labels=labels, path=traj))
    return out


def hitting_time_stats(summaries: Sequence[TrajectorySummary], rule_label: str) -> dict:
    """Summary statistics of a labelled stopping time across a batch.

    Censored paths (no hit recorded) are counted separately; quantiles and
    mean_of_logs are computed over the uncensored sample only and are NaN
    when it is empty.
    """
    if not summaries:
        raise ValueError("empty batch")
    if rule_label not in summaries[0].labels:
        raise KeyError(f"unknown stop rule label {rule_label!r}")
    times = []
    for s in summaries:
        e = s.first_event(rule_label)
        if e is not None:
            times.append(e.time)
    times = np.asarray(times, dtype=float)
    n_hit = len(times)
    qs = (0.1, 0.25, 0.5, 0.75, 0.9)
    if n_hit:
        quantiles = {f"q{int(q * 100)}": float(np.quantile(times, q)) for q in qs}
        mean_of_logs = float(np.mean(np.log(np.maximum(times, 1e-300))))
    else:
        quantiles = {f"q{int(q * 100)}": float("nan") for q in qs}
        mean_of_logs = float("nan")
    return {"count": n_hit, "censored": len(summaries) - n_hit,
            "quantiles": quantiles, "mean_of_logs": mean_of_logs}
