"""Compiled per-path integrators for the long exit-time runs.

The builtin model/kernel pairs have closed-form coefficients cheap enough to
inline, which is what makes horizons of order exp(Vbar/eps) affordable.  Each
path owns a Philox stream keyed by (seed, path_index) and consumes exactly
`dim` normals per step, in the same order as the generic engine, so short
runs agree bit-for-bit with `sde.simulate` and results are independent of the
worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:                                    # pragma: no cover
    _HAVE_NUMBA = False

_CHUNK_STEPS = 1 << 20

_MODEL_IDS = {"quad1d": 0, "band1d": 1}
_SQRT_2_PI = math.sqrt(2.0 / math.pi)

if _HAVE_NUMBA:

    @numba.njit(nogil=True, cache=True)
    def _run_1d(model_id, kappa, s, eps, dt, x, lo, hi, tube, gam, n_steps, noise):
        """Advance a 1-d path through one noise chunk.

        Returns (status, steps_used, x_out, tau) with status 0 = chunk
        exhausted, 1 = domain exit (tau interpolated, x_out on the boundary),
        2 = absorbed in the tube.
        """
        c_b = 0.5 * s * s
        m3 = 2.0 * s * s * s * _SQRT_2_PI
        c_bt = 0.25 * m3
        c_a = 0.5 * m3
        sdt = math.sqrt(dt)
        se = math.sqrt(eps)
        for i in range(n_steps):
            if model_id == 0:
                g = -x
                h11 = -2.0
            else:
                g = 1.0 - x * x
                h11 = 2.0 * kappa
            sgn = 1.0 if g > 0.0 else (-1.0 if g < 0.0 else 0.0)
            b = c_b * g + eps * c_bt * sgn * h11
            a = c_a * abs(g)
            xn = x + b * dt + se * math.sqrt(a) * sdt * noise[i]
            if xn <= lo or xn >= hi:
                bound = lo if xn <= lo else hi
                frac = (bound - x) / (xn - x)
                return 1, i + 1, bound, (i + frac) * dt
            hit = False
            for j in range(gam.shape[0]):
                if abs(xn - gam[j]) <= tube:
                    hit = True
            if hit:
                return 2, i + 1, xn, (i + 1) * dt
            x = xn
        return 0, n_steps, x, 0.0

    @numba.njit(nogil=True, cache=True)
    def _run_radial2d(s, eps, dt, x, y, cx, cy, radius, tube, n_steps, noise):
        """Advance a radial2d path through one noise chunk (ball domain)."""
        c_b = 0.5 * s * s
        bt_mag = 1.5 * _SQRT_2_PI * s * s * s
        c_a = 0.5 * _SQRT_2_PI * s * s * s
        sdt = math.sqrt(dt)
        se = math.sqrt(eps)
        sq2m1 = math.sqrt(2.0) - 1.0
        for i in range(n_steps):
            r = math.sqrt(x * x + y * y)
            if r <= tube:
                return 2, i, x, y, i * dt
            vx = x / r
            vy = y / r
            bx = -c_b * x + eps * bt_mag * vx
            by = -c_b * y + eps * bt_mag * vy
            c = math.sqrt(c_a * r)
            g1 = noise[2 * i]
            g2 = noise[2 * i + 1]
            vg = vx * g1 + vy * g2
            sx = c * (g1 + sq2m1 * vg * vx)
            sy = c * (g2 + sq2m1 * vg * vy)
            xn = x + bx * dt + se * sdt * sx
            yn = y + by * dt + se * sdt * sy
            f0 = math.sqrt((x - cx) ** 2 + (y - cy) ** 2) - radius
            f1 = math.sqrt((xn - cx) ** 2 + (yn - cy) ** 2) - radius
            if f1 >= 0.0:
                frac = f0 / (f0 - f1)
                ex = x + frac * (xn - x)
                ey = y + frac * (yn - y)
                return 1, i + 1, ex, ey, (i + frac) * dt
            x = xn
            y = yn
        return 0, n_steps, x, y, 0.0


def available() -> bool:
    return _HAVE_NUMBA


def _one_path_1d(spec, domain, x0, eps, dt, t_max, tube, gam, seed, index):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, index))))
    model_id = _MODEL_IDS[spec["model"]]
    kappa = float(spec.get("kappa") or 0.0)
    s = spec["s"]
    max_steps = int(round(t_max / dt))
    x = float(x0[0])
    done = 0
    while done < max_steps:
        n = min(_CHUNK_STEPS, max_steps - done)
        noise = rng.standard_normal(n)
        status, used, x, tau = _run_1d(model_id, kappa, s, eps, dt, x,
                                       domain.lo, domain.hi, tube, gam, n, noise)
        if status == 1:
            return done * dt + tau, np.array([x]), False
        if status == 2:
            return np.nan, np.full(1, np.nan), True
        done += used
    return np.nan, np.full(1, np.nan), False


def _one_path_radial(spec, domain, x0, eps, dt, t_max, tube, seed, index):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, index))))
    s = spec["s"]
    max_steps = int(round(t_max / dt))
    x, y = float(x0[0]), float(x0[1])
    cx, cy = float(domain.center[0]), float(domain.center[1])
    done = 0
    while done < max_steps:
        n = min(_CHUNK_STEPS, max_steps - done)
        noise = rng.standard_normal(2 * n)
        status, used, x, y, tau = _run_radial2d(s, eps, dt, x, y, cx, cy,
                                                domain.radius, tube, n, noise)
        if status == 1:
            return done * dt + tau, np.array([x, y]), False
        if status == 2:
            return np.nan, np.full(2, np.nan), True
        done += used
    return np.nan, np.full(2, np.nan), False


def exit_batch(spec, domain, x0, eps, dt, t_max, tube, n_paths, seed, workers=1):
    """Exit times/points for n_paths compiled paths; NaN time means censored."""
    if not _HAVE_NUMBA:                               # pragma: no cover
        raise RuntimeError("numba unavailable; use the vectorised engine")
    d = spec["dim"]
    times = np.full(n_paths, np.nan)
    points = np.full((n_paths, d), np.nan)
    absorbed = np.zeros(n_paths, dtype=bool)
    if spec["model"] == "radial2d":
        def run(i):
            return _one_path_radial(spec, domain, x0, eps, dt, t_max, tube, seed, i)
    else:
        gam = np.ascontiguousarray(_gamma_points_1d(spec))

        def run(i):
            return _one_path_1d(spec, domain, x0, eps, dt, t_max, tube, gam, seed, i)

    def worker(i):
        t, p, ab = run(i)
        times[i] = t
        points[i] = p
        absorbed[i] = ab

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(worker, range(n_paths)))
    else:
        for i in range(n_paths):
            worker(i)
    return times, points, absorbed


def _gamma_points_1d(spec):
    if spec["model"] == "quad1d":
        return np.array([0.0])
    return np.array([-1.0, 1.0])
