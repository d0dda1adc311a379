"""Scenario files: strict-schema parsing, canonical serialisation, manifests.

A scenario is a plain-text file of ``key = value`` lines grouped under
``[section]`` headers; values use JSON syntax (numbers, quoted strings,
booleans, lists).  The schema is closed: an unknown section or key is an
error naming it, so a typo like ``epss`` cannot silently misconfigure a run.
Serialisation is canonical (fixed section and key order, shortest-round-trip
floats), which makes parse/write round trips byte-identical and scenario
hashes stable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ScenarioError

__all__ = ["Scenario", "parse_scenario", "write_scenario", "RunManifest", "SCHEMA"]

_REQ = object()

# section -> key -> (type tag, default); _REQ means required whenever the
# section itself is used by the dispatched command
SCHEMA = {
    "": {
        "seed": ("int", 0),
        "workers": ("int", None),
        "out_dir": ("str", None),
    },
    "model": {
        "name": ("str", _REQ),
        "kappa": ("float", None),
    },
    "kernel": {
        "name": ("str", "gaussian_isotropic"),
        "s": ("float", 1.0),
        "K": ("nested", None),
    },
    "gamma": {
        "box_half_width": ("float", 2.0),
        "grid_per_axis": ("int", 16),
        "merge_radius": ("float", 1e-4),
    },
    "sim": {
        "eps": ("float", _REQ),
        "dt": ("float", _REQ),
        "t_max": ("float", _REQ),
        "absorb_tube": ("float", 1e-5),
        "x0": ("list_f", _REQ),
        "n_paths": ("int", 1),
        "store_stride": ("int", 0),
        "thin": ("int", 1),
    },
    "classify": {
        "x": ("float", None),
        "eps": ("float", 0.1),
        "n_panels": ("int", 400),
        "nbhd_radius": ("float", 0.3),
        "samples": ("int", 4000),
    },
    "domain": {
        "kind": ("str", _REQ),
        "lo": ("float", None),
        "hi": ("float", None),
        "center": ("list_f", None),
        "radius": ("float", None),
        "vertices": ("nested", None),
    },
    "quasipotential": {
        "start": ("list_f", _REQ),
        "end": ("list_f", _REQ),
        "n_nodes": ("int", 100),
        "t_grid": ("list_f", None),
        "origin_rho": ("float", None),
        "max_iters": ("int", 500),
        "tol": ("float", 1e-10),
        "ring_candidates": ("int", 16),
        "tube": ("float", 1e-6),
    },
    "exit_cost": {
        "n_boundary": ("int", 24),
    },
    "exit": {
        "eps_values": ("list_f", _REQ),
        "n_paths": ("int", 200),
        "dt": ("float", 0.002),
        "absorb_tube": ("float", 1e-5),
        "x0": ("list_f", _REQ),
        "delta": ("float", None),
        "v_bar": ("float", None),
        "z_star": ("list_f", None),
        "t_max_cap": ("float", 1e7),
    },
    "coeff_table": {
        "lo": ("list_f", _REQ),
        "hi": ("list_f", _REQ),
        "n": ("list_i", _REQ),
        "backend": ("str", "auto"),
    },
}

_SECTION_ORDER = ["", "model", "kernel", "gamma", "sim", "classify", "domain",
                  "quasipotential", "exit_cost", "exit", "coeff_table"]


def _check_type(tag: str, v: Any) -> bool:
    if tag == "int":
        return isinstance(v, int) and not isinstance(v, bool)
    if tag == "float":
        return isinstance(v, (int, float)) and not isinstance(v, bool)
    if tag == "str":
        return isinstance(v, str)
    if tag == "bool":
        return isinstance(v, bool)
    if tag == "list_f":
        return isinstance(v, list) and all(
            isinstance(u, (int, float)) and not isinstance(u, bool) for u in v)
    if tag == "list_i":
        return isinstance(v, list) and all(
            isinstance(u, int) and not isinstance(u, bool) for u in v)
    if tag == "nested":
        return isinstance(v, list) and all(
            isinstance(row, list) and all(
                isinstance(u, (int, float)) and not isinstance(u, bool) for u in row)
            for row in v)
    raise ValueError(f"unknown schema tag {tag}")


@dataclass
class Scenario:
    """Validated scenario contents, keyed by section then key."""

    data: dict = field(default_factory=dict)

    def get(self, section: str, key: str):
        spec = SCHEMA[section][key]
        v = self.data.get(section, {}).get(key, spec[1])
        return None if v is _REQ else v

    def require(self, section: str, key: str):
        v = self.data.get(section, {}).get(key)
        if v is None:
            raise ScenarioError(f"missing required key '{key}' in section [{section}]"
                                if section else f"missing required key '{key}'")
        return v

    def has(self, section: str) -> bool:
        return section in self.data

    def sha256(self) -> str:
        return hashlib.sha256(write_scenario(self).encode()).hexdigest()


def parse_scenario(text: str) -> Scenario:
    """Parse and validate scenario text against the closed schema."""
    data: dict = {}
    section = ""
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ScenarioError(f"line {ln}: unknown section [{section}]")
            data.setdefault(section, {})
            continue
        if "=" not in line:
            raise ScenarioError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, _, rhs = line.partition("=")
        key = key.strip()
        if key not in SCHEMA.get(section, {}):
            where = f"section [{section}]" if section else "the top level"
            raise ScenarioError(f"line {ln}: unknown key '{key}' in {where}")
        try:
            value = json.loads(rhs.strip())
        except json.JSONDecodeError as e:
            raise ScenarioError(f"line {ln}: bad value for '{key}': {e}") from None
        tag = SCHEMA[section][key][0]
        if not _check_type(tag, value):
            raise ScenarioError(
                f"line {ln}: key '{key}' expects {tag}, got {type(value).__name__}")
        if tag == "float" and isinstance(value, int):
            value = float(value)
        if tag == "list_f":
            value = [float(u) for u in value]
        bucket = data.setdefault(section, {})
        if key in bucket:
            raise ScenarioError(f"line {ln}: duplicate key '{key}'")
        bucket[key] = value
    return Scenario(data=data)


def write_scenario(s: Scenario) -> str:
    """Canonical serialisation: fixed ordering, JSON value syntax."""
    out = []
    for section in _SECTION_ORDER:
        if section not in s.data or not s.data[section]:
            continue
        if section:
            if out:
                out.append("")
            out.append(f"[{section}]")
        for key in SCHEMA[section]:
            if key in s.data[section]:
                out.append(f"{key} = {json.dumps(s.data[section][key])}")
    return "\n".join(out) + "\n"


@dataclass
class RunManifest:
    command: str
    scenario_sha256: str
    artifact_version: str
    seed: int
    workers: int
    wall_time_s: float
    outputs: dict                  # filename -> sha256

    def to_json(self) -> str:
        return json.dumps({
            "command": self.command,
            "scenario_sha256": self.scenario_sha256,
            "artifact_version": self.artifact_version,
            "seed": self.seed,
            "workers": self.workers,
            "wall_time_s": self.wall_time_s,
            "outputs": self.outputs,
        }, indent=2, sort_keys=True) + "\n"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()
