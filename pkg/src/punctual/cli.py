"""Command-line entry point: scenario-driven runs with reproducible outputs.

Usage: punctual <subcommand> --scenario FILE [--seed N] [--workers N] [--out DIR]

Subcommands: coeff-table, classify, simulate, quasipotential, exit-cost,
exit-experiment.  Every run writes its data files plus one manifest.json
recording the scenario hash and per-output checksums; identical scenarios and
seeds reproduce identical data checksums for any worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classify import attach_scale, classify_dim1, classify_dimd
from .coeff import build_field
from .errors import PunctualError, ScenarioError
from .exitdomain import Domain, run_exit_experiment
from .models import MutationKernel, builtin_model, find_singularities
from .scenario import RunManifest, Scenario, file_sha256, parse_scenario, write_scenario
from .sde import SimConfig, simulate, simulate_batch

COMMANDS = ("coeff-table", "classify", "simulate", "quasipotential",
            "exit-cost", "exit-experiment")


def _fmt(v: float) -> str:
    return repr(float(v))


def _build(scn: Scenario):
    name = scn.require("model", "name")
    params = {}
    if scn.get("model", "kappa") is not None:
        params["kappa"] = scn.get("model", "kappa")
    model = builtin_model(name, **params)
    kname = scn.get("kernel", "name")
    if kname == "gaussian_isotropic":
        kernel = MutationKernel.gaussian_isotropic(model.dim, scn.get("kernel", "s"))
    elif kname == "gaussian_full":
        K = scn.get("kernel", "K")
        if K is None:
            raise ScenarioError("kernel 'gaussian_full' requires K")
        kernel = MutationKernel.gaussian_full(np.asarray(K))
    else:
        raise ScenarioError(f"unknown kernel {kname!r} (custom kernels register "
                            "via the library API only)")
    hw = scn.get("gamma", "box_half_width")
    box = np.tile([-hw, hw], (model.dim, 1))
    gamma = find_singularities(model, box, scn.get("gamma", "grid_per_axis"),
                               scn.get("gamma", "merge_radius"))
    fld = build_field(model, kernel, gamma)
    return model, kernel, gamma, fld


def _domain(scn: Scenario) -> Domain:
    kind = scn.require("domain", "kind")
    if kind == "interval":
        return Domain.interval(scn.require("domain", "lo"), scn.require("domain", "hi"))
    if kind == "ball":
        return Domain.ball(scn.require("domain", "center"), scn.require("domain", "radius"))
    if kind == "polygon":
        return Domain.polygon(scn.require("domain", "vertices"))
    raise ScenarioError(f"unknown domain kind {kind!r}")


def _qp_options(scn: Scenario):
    from .action import QPOptions
    kw = {}
    if scn.has("quasipotential"):
        sec = scn.data.get("quasipotential", {})
        for k in ("n_nodes", "max_iters", "tol", "ring_candidates", "tube"):
            if k in sec:
                kw[k] = sec[k]
        if sec.get("t_grid"):
            kw["t_grid"] = sec["t_grid"]
        if sec.get("origin_rho") is not None:
            kw["origin_rho"] = sec["origin_rho"]
    return QPOptions(**kw)


def _write(out_dir: Path, name: str, text: str, outputs: dict):
    path = out_dir / name
    path.write_text(text)
    outputs[name] = file_sha256(path)


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------

def _cmd_coeff_table(scn, fld, out_dir, seed, workers, outputs):
    lo = scn.require("coeff_table", "lo")
    hi = scn.require("coeff_table", "hi")
    n = scn.require("coeff_table", "n")
    d = fld.dim
    if not (len(lo) == len(hi) == len(n) == d):
        raise ScenarioError("coeff_table lo/hi/n must match the model dimension")
    axes = [np.linspace(lo[j], hi[j], n[j]) for j in range(d)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    b = fld.b(grid)
    bt = fld.b_tilde(grid)
    a = fld.a(grid).reshape(len(grid), d * d)
    header = (",".join(f"x{j+1}" for j in range(d)) + ","
              + ",".join(f"b{j+1}" for j in range(d)) + ","
              + ",".join(f"bt{j+1}" for j in range(d)) + ","
              + ",".join(f"a{i+1}{j+1}" for i in range(d) for j in range(d)))
    rows = [header]
    for k in range(len(grid)):
        rows.append(",".join(_fmt(v) for v in
                             np.concatenate([grid[k], b[k], bt[k], a[k]])))
    _write(out_dir, "coeff_table.csv", "\n".join(rows) + "\n", outputs)
    return {"rows": len(grid)}


def _cmd_classify(scn, model, kernel, gamma, fld, out_dir, seed, workers, outputs):
    lines = []
    if model.dim == 1:
        x = scn.get("classify", "x")
        if x is None:
            raise ScenarioError("classify on a 1-d model requires classify.x")
        verdict = classify_dim1(model, kernel, gamma, x)
        attach_scale(verdict, fld, scn.get("classify", "eps"),
                     scn.get("classify", "n_panels"))
        lines.append(json.dumps(verdict.as_dict(), sort_keys=True))
    else:
        for y in gamma.points:
            v = classify_dimd(model, kernel, y,
                              nbhd_radius=scn.get("classify", "nbhd_radius"),
                              samples=scn.get("classify", "samples"), seed=seed)
            lines.append(json.dumps(v.as_dict(), sort_keys=True))
    text = "\n".join(lines) + "\n"
    _write(out_dir, "classify.jsonl", text, outputs)
    sys.stdout.write(text)
    return {"verdicts": len(lines)}


def _cmd_simulate(scn, fld, out_dir, seed, workers, outputs):
    cfg = SimConfig(eps=scn.require("sim", "eps"), dt=scn.require("sim", "dt"),
                    t_max=scn.require("sim", "t_max"),
                    absorb_tube=scn.get("sim", "absorb_tube"), seed=seed)
    x0 = scn.require("sim", "x0")
    n_paths = scn.get("sim", "n_paths")
    thin = max(1, scn.get("sim", "thin"))
    if n_paths == 1:
        traj = simulate(fld, x0, cfg)
        d = fld.dim
        header = "t," + ",".join(f"x{j+1}" for j in range(d)) + ",absorbed"
        rows = [header]
        n = len(traj.times)
        for i in range(0, n, thin):
            absorbed = traj.absorbed_at is not None and traj.times[i] >= traj.absorbed_at
            rows.append(_fmt(traj.times[i]) + ","
                        + ",".join(_fmt(v) for v in traj.points[i])
                        + f",{int(absorbed)}")
        if (n - 1) % thin != 0:
            absorbed = traj.absorbed_at is not None
            rows.append(_fmt(traj.times[-1]) + ","
                        + ",".join(_fmt(v) for v in traj.points[-1])
                        + f",{int(absorbed)}")
        _write(out_dir, "trajectory.csv", "\n".join(rows) + "\n", outputs)
        return {"absorbed_at": traj.absorbed_at}
    sums = simulate_batch(fld, x0, cfg, (), n_paths, workers,
                          store_stride=scn.get("sim", "store_stride"))
    lines = []
    for s in sums:
        lines.append(json.dumps({
            "path_index": s.path_index,
            "terminal": [float(v) for v in s.terminal],
            "t_end": s.t_end,
            "absorbed_at": s.absorbed_at,
            "events": [{"time": e.time, "label": e.label} for e in s.exit_events],
        }, sort_keys=True))
    _write(out_dir, "summaries.jsonl", "\n".join(lines) + "\n", outputs)
    return {"n_paths": n_paths}


def _cmd_quasipotential(scn, fld, out_dir, seed, workers, outputs):
    from .action import quasipotential
    res = quasipotential(fld, scn.require("quasipotential", "start"),
                         scn.require("quasipotential", "end"), _qp_options(scn))
    d = fld.dim
    rows = ["t," + ",".join(f"x{j+1}" for j in range(d))]
    for t, p in zip(res.path.times, res.path.points):
        rows.append(_fmt(t) + "," + ",".join(_fmt(v) for v in p))
    _write(out_dir, "qp_path.csv", "\n".join(rows) + "\n", outputs)
    summary = {"value": res.value, "t_star": res.t_star,
               "connector_cost_bound": res.connector_cost_bound,
               "converged": res.converged}
    _write(out_dir, "qp_result.json", json.dumps(summary, sort_keys=True,
                                                 indent=2) + "\n", outputs)
    return summary


def _cmd_exit_cost(scn, fld, out_dir, seed, workers, outputs):
    from .action import exit_cost
    res = exit_cost(fld, _domain(scn), _qp_options(scn),
                    n_boundary=scn.get("exit_cost", "n_boundary"),
                    seed=seed, workers=workers)
    d = fld.dim
    rows = [",".join(f"bx{j+1}" for j in range(d)) + ",V"]
    for p, v, _ in res.boundary_profile:
        rows.append(",".join(_fmt(u) for u in p) + "," + _fmt(v))
    _write(out_dir, "exit_cost_profile.csv", "\n".join(rows) + "\n", outputs)
    summary = {"v_bar": res.v_bar, "z_star": [float(v) for v in res.z_star],
               "attracting_warning": res.attracting_warning}
    _write(out_dir, "exit_cost.json", json.dumps(summary, sort_keys=True,
                                                 indent=2) + "\n", outputs)
    return summary


def _cmd_exit_experiment(scn, fld, out_dir, seed, workers, outputs):
    domain = _domain(scn)
    x0 = scn.require("exit", "x0")
    v_bar = scn.get("exit", "v_bar")
    z_star = scn.get("exit", "z_star")
    if v_bar is None:
        from .action import exit_cost
        res = exit_cost(fld, domain, _qp_options(scn),
                        n_boundary=scn.get("exit_cost", "n_boundary"),
                        seed=seed, workers=workers)
        v_bar, z_star = res.v_bar, list(res.z_star)
    cfg = SimConfig(eps=1.0, dt=scn.get("exit", "dt"),
                    t_max=scn.get("exit", "t_max_cap"),
                    absorb_tube=scn.get("exit", "absorb_tube"), seed=seed)
    res = run_exit_experiment(fld, domain, x0, scn.require("exit", "eps_values"),
                              scn.get("exit", "n_paths"), cfg, v_bar,
                              z_star=z_star, delta=scn.get("exit", "delta"),
                              workers=workers)
    d = fld.dim
    rows = ["eps,seed_index," + "t_exit," + ",".join(f"bx{j+1}" for j in range(d))
            + ",censored"]
    for st in res.per_eps:
        for i in range(st.n_paths):
            t = st.exit_times[i]
            pt = st.exit_points[i]
            rows.append(_fmt(st.eps) + f",{i}," + (_fmt(t) if np.isfinite(t) else "nan")
                        + "," + ",".join(_fmt(v) if np.isfinite(v) else "nan" for v in pt)
                        + f",{int(st.censored[i])}")
    _write(out_dir, "exit_points.csv", "\n".join(rows) + "\n", outputs)
    summary = [{
        "eps": st.eps, "n_paths": st.n_paths, "t_max": st.t_max,
        "threshold": st.threshold, "n_censored": int(st.censored.sum()),
        "n_absorbed": st.n_absorbed,
        "frac_exceeding_threshold": st.frac_exceeding_threshold,
        "eps_log_median": None if not np.isfinite(st.eps_log_median)
        else st.eps_log_median,
        "all_censored": st.all_censored,
    } for st in res.per_eps]
    blob = {"v_bar": res.v_bar_used, "delta": res.delta, "engine": res.engine,
            "z_star": None if res.z_star_used is None
            else [float(v) for v in res.z_star_used],
            "per_eps": summary}
    _write(out_dir, "exit_summary.json", json.dumps(blob, sort_keys=True,
                                                    indent=2) + "\n", outputs)
    return {"v_bar": res.v_bar_used, "engine": res.engine}


# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="punctual", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--scenario", required=True, help="scenario file path")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)

    t0 = time.time()
    try:
        text = Path(args.scenario).read_text()
        scn = parse_scenario(text)
        seed = args.seed if args.seed is not None else scn.get("", "seed")
        workers = args.workers if args.workers is not None else \
            (scn.get("", "workers") or int(os.environ.get("PUNCTUAL_WORKERS", "1")))
        out_dir = Path(args.out or scn.get("", "out_dir") or "punctual_out")
        out_dir.mkdir(parents=True, exist_ok=True)

        model, kernel, gamma, fld = _build(scn)
        outputs: dict = {}
        if args.command == "coeff-table":
            backend = scn.get("coeff_table", "backend")
            if backend != "auto":
                fld = build_field(model, kernel, gamma, backend=backend)
            info = _cmd_coeff_table(scn, fld, out_dir, seed, workers, outputs)
        elif args.command == "classify":
            info = _cmd_classify(scn, model, kernel, gamma, fld, out_dir, seed,
                                 workers, outputs)
        elif args.command == "simulate":
            info = _cmd_simulate(scn, fld, out_dir, seed, workers, outputs)
        elif args.command == "quasipotential":
            info = _cmd_quasipotential(scn, fld, out_dir, seed, workers, outputs)
        elif args.command == "exit-cost":
            info = _cmd_exit_cost(scn, fld, out_dir, seed, workers, outputs)
        else:
            info = _cmd_exit_experiment(scn, fld, out_dir, seed, workers, outputs)

        manifest = RunManifest(command=args.command, scenario_sha256=scn.sha256(),
                               artifact_version=__version__, seed=seed,
                               workers=workers, wall_time_s=time.time() - t0,
                               outputs=outputs)
        (out_dir / "manifest.json").write_text(manifest.to_json())
        sys.stdout.write(json.dumps({"ok": True, "command": args.command,
                                     "out_dir": str(out_dir), **{k: v for k, v in
                                     (info or {}).items() if _json_ok(v)}},
                                    sort_keys=True) + "\n")
        return 0
    except ScenarioError as e:
        sys.stderr.write(json.dumps({"error": "scenario", "message": str(e)}) + "\n")
        return 2
    except (PunctualError, ValueError) as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 1


def _json_ok(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


if __name__ == "__main__":
    sys.exit(main())
