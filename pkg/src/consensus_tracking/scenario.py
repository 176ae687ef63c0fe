"""Scenario files: YAML documents describing plant, exosystems, cost and run.

Layout::

    name: my-scenario
    dims: {agents: 1, state: 2, input: 2, disturbance: 2, reference: 2, output: 2}
    plant:       {A, B1, B2, C, x0, Qm, Qn}
    disturbance: {K, w0, Qw}
    reference:   {F, H, z0, Qmz, Qnz}
    cost:        {Q, R}
    sim:         {dt, T, seed, seeds, mode}      # optional

Matrices are lists of rows and must match the declared ``dims``.  Noise
intensities may be a scalar ``s`` meaning ``s * I``.  Parse problems raise
:class:`ScenarioParseError` carrying the line and column of the offending node.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources

import numpy as np
import yaml

from .errors import InvalidModel, ScenarioParseError
from .simulation import MODES, SimConfig
from .system_model import CostSpec, ExosystemModel, PlantModel

__all__ = [
    "Scenario",
    "load_scenario",
    "parse_scenario",
    "dump_scenario",
    "builtin_scenario",
    "with_overrides",
]

_DIMS = ("agents", "state", "input", "disturbance", "reference", "output")


@dataclass(frozen=True)
class Scenario:
    name: str
    plant: PlantModel
    exo: ExosystemModel
    cost: CostSpec
    sim: SimConfig
    seeds: int = 20


class _Marked(dict):
    """dict that remembers where each key's value started in the source."""

    mark = None
    marks = None


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    data = _Marked(loader.construct_mapping(node, deep=True))
    data.mark = node.start_mark
    data.marks = {k.value: v.start_mark for k, v in node.value}
    return data


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _fail(message, mark=None, path=None):
    if mark is None:
        raise ScenarioParseError(message, path=path)
    raise ScenarioParseError(message, line=mark.line + 1, column=mark.column + 1, path=path)


class _Reader:
    def __init__(self, doc, path):
        self.doc = doc
        self.path = path

    def section(self, name, required=True):
        sec = self.doc.get(name)
        if sec is None:
            if required:
                _fail(f"missing section '{name}'", self.doc.mark, self.path)
            return None
        if not isinstance(sec, _Marked):
            _fail(f"section '{name}' must be a mapping", self.doc.marks.get(name), self.path)
        return sec

    def _get(self, sec, key):
        if key not in sec:
            _fail(f"missing key '{key}'", sec.mark, self.path)
        return sec[key], sec.marks.get(key)

    def number(self, sec, key, default=None, kind=float):
        if key not in sec and default is not None:
            return default
        val, mark = self._get(sec, key)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            _fail(f"'{key}' must be a number", mark, self.path)
        return kind(val)

    def matrix(self, sec, key, shape):
        val, mark = self._get(sec, key)
        if not isinstance(val, list) or not all(isinstance(row, list) for row in val):
            _fail(f"'{key}' must be a list of rows", mark, self.path)
        widths = {len(row) for row in val}
        if len(widths) > 1:
            _fail(f"'{key}' has ragged rows", mark, self.path)
        try:
            arr = np.array(val, dtype=float).reshape(len(val), widths.pop() if widths else 0)
        except (TypeError, ValueError):
            _fail(f"'{key}' has non-numeric entries", mark, self.path)
        if arr.shape != shape:
            _fail(f"'{key}' has shape {arr.shape}, expected {shape}", mark, self.path)
        return arr

    def vector(self, sec, key, n):
        val, mark = self._get(sec, key)
        if not isinstance(val, list):
            _fail(f"'{key}' must be a list", mark, self.path)
        try:
            arr = np.array(val, dtype=float)
        except (TypeError, ValueError):
            _fail(f"'{key}' has non-numeric entries", mark, self.path)
        if arr.shape != (n,):
            _fail(f"'{key}' has length {arr.size}, expected {n}", mark, self.path)
        return arr

    def intensity(self, sec, key, n):
        val, mark = self._get(sec, key)
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            return float(val) * np.eye(n)
        return self.matrix(sec, key, (n, n))


def parse_scenario(text, path=None):
    """Parse scenario YAML text into a :class:`Scenario`."""
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        _fail(f"YAML error: {exc.problem}", exc.problem_mark, path)
    except yaml.YAMLError as exc:
        _fail(f"YAML error: {exc}", None, path)
    if not isinstance(doc, _Marked):
        _fail("scenario must be a YAML mapping", None, path)
    rd = _Reader(doc, path)

    dims_sec = rd.section("dims")
    d = {}
    for key in _DIMS:
        d[key] = rd.number(dims_sec, key, default=1 if key == "agents" else None, kind=int)
        if d[key] < 1:
            _fail(f"dimension '{key}' must be >= 1", dims_sec.marks.get(key), path)
    nx, nu, nw, nz, ny = (d[k] for k in ("state", "input", "disturbance", "reference", "output"))

    sec = rd.section("plant")
    try:
        plant = PlantModel(
            A=rd.matrix(sec, "A", (nx, nx)), B1=rd.matrix(sec, "B1", (nx, nu)),
            B2=rd.matrix(sec, "B2", (nx, nw)), C=rd.matrix(sec, "C", (ny, nx)),
            x0=rd.vector(sec, "x0", nx), Qm=rd.intensity(sec, "Qm", nx),
            Qn=rd.intensity(sec, "Qn", ny), n_agents=d["agents"])
    except InvalidModel as exc:
        _fail(f"plant: {exc}", sec.mark, path)

    dist = rd.section("disturbance")
    ref = rd.section("reference")
    try:
        exo = ExosystemModel(
            K=rd.matrix(dist, "K", (nw, nw)), w0=rd.vector(dist, "w0", nw),
            Qmw=rd.intensity(dist, "Qw", nw),
            F=rd.matrix(ref, "F", (nz, nz)), H=rd.matrix(ref, "H", (ny, nz)),
            z0=rd.vector(ref, "z0", nz), Qmz=rd.intensity(ref, "Qmz", nz),
            Qnz=rd.intensity(ref, "Qnz", ny))
    except InvalidModel as exc:
        _fail(f"exosystems: {exc}", ref.mark, path)

    sec = rd.section("cost")
    try:
        cost = CostSpec(Q=rd.matrix(sec, "Q", (ny, ny)), R=rd.matrix(sec, "R", (nu, nu)))
    except InvalidModel as exc:
        _fail(f"cost: {exc}", sec.mark, path)

    sim_sec = rd.section("sim", required=False)
    sim, seeds = SimConfig(), 20
    if sim_sec is not None:
        mode = sim_sec.get("mode", "kalman")
        if mode not in MODES:
            _fail(f"sim.mode must be one of {MODES}", sim_sec.marks.get("mode"), path)
        try:
            sim = SimConfig(
                dt=rd.number(sim_sec, "dt", default=sim.dt),
                T=rd.number(sim_sec, "T", default=sim.T),
                seed=rd.number(sim_sec, "seed", default=0, kind=int),
                mode=mode,
                measurement_noise=sim_sec.get("measurement_noise", "intensity"),
            )
        except ValueError as exc:
            _fail(f"sim: {exc}", sim_sec.mark, path)
        if "seeds" in sim_sec:
            seeds = rd.number(sim_sec, "seeds", kind=int)
    name = str(doc.get("name", "scenario"))
    return Scenario(name=name, plant=plant, exo=exo, cost=cost, sim=sim, seeds=seeds)


def load_scenario(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario: {exc}", path=str(path)) from exc
    return parse_scenario(text, path=str(path))


def builtin_scenario():
    """The built-in two-state reference scenario."""
    text = resources.files(__package__).joinpath("data/builtin_scenario.yaml").read_text()
    return parse_scenario(text, path="<builtin>")


def _rows(M):
    return [[float(v) for v in row] for row in np.atleast_2d(M)]


def scenario_to_dict(sc):
    p, x, c = sc.plant, sc.exo, sc.cost
    return {
        "name": sc.name,
        "dims": {"agents": p.n_agents, "state": p.n_state, "input": p.n_input,
                 "disturbance": p.n_dist, "reference": x.n_ref, "output": p.n_output},
        "plant": {"A": _rows(p.A), "B1": _rows(p.B1), "B2": _rows(p.B2), "C": _rows(p.C),
                  "x0": [float(v) for v in p.x0], "Qm": _rows(p.Qm), "Qn": _rows(p.Qn)},
        "disturbance": {"K": _rows(x.K), "w0": [float(v) for v in x.w0], "Qw": _rows(x.Qmw)},
        "reference": {"F": _rows(x.F), "H": _rows(x.H), "z0": [float(v) for v in x.z0],
                      "Qmz": _rows(x.Qmz), "Qnz": _rows(x.Qnz)},
        "cost": {"Q": _rows(c.Q), "R": _rows(c.R)},
        "sim": {"dt": sc.sim.dt, "T": sc.sim.T, "seed": int(sc.sim.seed), "seeds": sc.seeds,
                "mode": sc.sim.mode, "measurement_noise": sc.sim.measurement_noise},
    }


def dump_scenario(sc, path):
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(sc), fh, sort_keys=False, default_flow_style=None)


def with_overrides(sc, **changes):
    """Copy of ``sc`` with fields of its plant/exo/cost/sim replaced by keyword.

    Keys are routed by name: e.g. ``H=np.zeros(...)`` goes to the exosystem,
    ``dt=...`` to the run config.
    """
    groups = {"plant": {}, "exo": {}, "cost": {}, "sim": {}}
    owners = (("plant", sc.plant), ("exo", sc.exo), ("cost", sc.cost), ("sim", sc.sim))
    for key, val in changes.items():
        for gname, obj in owners:
            if key in obj.__dataclass_fields__:
                groups[gname][key] = val
                break
        else:
            raise KeyError(f"unknown scenario field {key!r}")
    return replace(
        sc,
        plant=replace(sc.plant, **groups["plant"]) if groups["plant"] else sc.plant,
        exo=replace(sc.exo, **groups["exo"]) if groups["exo"] else sc.exo,
        cost=replace(sc.cost, **groups["cost"]) if groups["cost"] else sc.cost,
        sim=replace(sc.sim, **groups["sim"]) if groups["sim"] else sc.sim,
    )
