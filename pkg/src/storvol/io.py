"""Instance files in, result tables out.

An instance is one JSON document.  Per-hour series may be written inline
(a number for a flat profile, or a list with one entry per step) or point to
a CSV file with header ``node,t,value`` (``t`` runs from 1); the rows whose
``node`` column equals the entry's node (or ``key``, if given) are used.

Units are fixed: MW, MWh, $/MWh and hours.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .equilibrium import EquilibriumResult, SolverConfig
from .market import (ClassicalGenerator, DanglingReferenceError, DemandCurve, Horizon, ModelError, Network,
                     ScenarioSet, StorageFirm, StrategyProfile, TransmissionLine, WindFirm, nodal_prices,
                     price_variance, summary_metrics)
from .scenarios import FluctuationSpec, build_wind_scenarios, calibrate_demand


class InstanceError(Exception):
    exit_code = 2

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class InstanceParseError(InstanceError):
    exit_code = 5


class InstanceValidationError(InstanceError):
    exit_code = 2


class InstanceReferenceError(InstanceError):
    exit_code = 6


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

_NUM = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}
_SERIES = {"oneOf": [
    _NUM,
    {"type": "array", "items": _NUM, "minItems": 1},
    {"type": "object", "required": ["csv"], "additionalProperties": False,
     "properties": {"csv": {"type": "string"}, "key": {"type": "string"}}},
]}
_MODE = {"enum": ["strategic", "regulated"]}

SCHEMA = {
    "type": "object",
    "required": ["horizon", "nodes", "scenarios", "demand"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "horizon": {"type": "object", "required": ["n_steps"], "additionalProperties": False,
                    "properties": {"n_steps": {"type": "integer", "minimum": 1}, "delta": _NUM}},
        "nodes": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "scenarios": {"type": "object", "required": ["probabilities"], "additionalProperties": False,
                      "properties": {"probabilities": {"type": "array", "items": _NUM, "minItems": 1},
                                     "phi": {"oneOf": [_NUM, {"type": "array", "items": _NUM}]}}},
        "demand": {"type": "object", "additionalProperties": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "alpha": _SERIES, "beta": _SERIES,
                "calibration": {"type": "object", "required": ["p_ref", "q_ref", "elasticity"],
                                "additionalProperties": False,
                                "properties": {"p_ref": _SERIES, "q_ref": _SERIES, "elasticity": _SERIES}},
            }}},
        "generators": {"type": "array", "items": {
            "type": "object", "required": ["name", "node", "capacity", "marginal_cost"],
            "additionalProperties": False,
            "properties": {"name": {"type": "string"}, "node": {"type": "string"}, "capacity": _NUM,
                           "marginal_cost": _NUM, "ramp_up": _NUM, "ramp_down": _NUM}}},
        "wind": {"type": "array", "items": {
            "type": "object", "required": ["name", "node"], "additionalProperties": False,
            "properties": {"name": {"type": "string"}, "node": {"type": "string"}, "base": _SERIES,
                           "availability": {"type": "array", "items": {"type": "array", "items": _NUM}}}}},
        "storage": {"type": "array", "items": {
            "type": "object", "required": ["name", "node"], "additionalProperties": False,
            "properties": {"name": {"type": "string"}, "node": {"type": "string"}, "capacity": _NUM,
                           "op_cost": _NUM, "eff_dis": _NUM, "eff_ch": _NUM, "rate_dis": _NUM,
                           "rate_ch": _NUM, "mode": _MODE}}},
        "lines": {"type": "array", "items": {
            "type": "object", "required": ["name", "from", "to", "capacity"], "additionalProperties": False,
            "properties": {"name": {"type": "string"}, "from": {"type": "string"}, "to": {"type": "string"},
                           "capacity": _NUM, "derating": _NUM, "mode": _MODE}}},
        "solver": {"type": "object", "additionalProperties": False, "properties": {
            "tol_strategy": _NUM, "tol_kkt": _NUM, "tol_complementarity": _NUM, "subsolver_tol": _NUM,
            "max_iters": {"type": "integer"}, "damping": _NUM, "multistart": {"type": "integer"},
            "seed": {"type": "integer"}, "ordering": {"type": "array", "items": {"type": "string"}}}},
        "sweep": {"type": "object", "additionalProperties": False, "properties": {
            "step": _NONNEG, "max_capacity": _NONNEG, "node": {"type": "string"}, "mode": _MODE,
            "allocation": {"enum": ["single-node", "uniform", "coordinate-descent"]}}},
    },
}

_VALIDATOR = jsonschema.Draft7Validator(SCHEMA)


def _json_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


@dataclass(frozen=True)
class Instance:
    network: Network
    solver: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    source: str = ""

    def solver_config(self, environ=None, **overrides) -> SolverConfig:
        """Defaults, then the file's solver section, then environment, then ``overrides``."""
        base = dict(self.solver)
        env = SolverConfig.from_env(environ)
        for k, v in asdict(env).items():
            if getattr(SolverConfig(), k) != v:
                base[k] = v
        base.update({k: v for k, v in overrides.items() if v is not None})
        return SolverConfig(**base)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, base_dir: Path, n_steps: int):
        self.base_dir = base_dir
        self.T = n_steps
        self._csv = {}

    def _table(self, name: str, path: str) -> dict:
        file = (self.base_dir / name).resolve()
        if file not in self._csv:
            if not file.is_file():
                raise InstanceReferenceError(f"series file {name!r} not found", path)
            rows = {}
            try:
                with open(file, newline="") as fh:
                    reader = csv.DictReader(fh)
                    if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["node", "t", "value"]:
                        raise InstanceParseError(f"{name}: header must be node,t,value", path)
                    for k, row in enumerate(reader, start=2):
                        key = (row["node"].strip(), int(row["t"]))
                        if key in rows:
                            raise InstanceParseError(f"{name}:{k}: duplicate row for {key}", path)
                        rows[key] = float(row["value"])
            except (ValueError, TypeError, AttributeError) as exc:
                raise InstanceParseError(f"{name}: {exc}", path) from exc
            self._csv[file] = rows
        return self._csv[file]

    def series(self, value, path: str, key: str) -> np.ndarray:
        if isinstance(value, dict):
            table = self._table(value["csv"], path + ".csv")
            key = value.get("key", key)
            missing = [t for t in range(1, self.T + 1) if (key, t) not in table]
            if len(missing) == self.T:
                raise InstanceReferenceError(f"no rows for {key!r} in {value['csv']!r}", path)
            if missing:
                raise InstanceValidationError(f"{value['csv']!r} lacks t={missing[0]} for {key!r}", path)
            return np.array([table[key, t] for t in range(1, self.T + 1)])
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if arr.size == 1:
            return np.full(self.T, float(arr[0]))
        if arr.size != self.T:
            raise InstanceValidationError(f"series has {arr.size} entries, horizon has {self.T}", path)
        return arr


def _check_positive(arr, path):
    bad = np.flatnonzero(~(arr > 0))
    if bad.size:
        raise InstanceValidationError(f"must be > 0 (got {arr[bad[0]]!r})", f"{path}[{bad[0]}]")


def _mode(entry, default):
    return {"strategic": 0, "regulated": 1}[entry.get("mode", default)]


def _build(doc: dict, base_dir: Path) -> Network:
    T = doc["horizon"]["n_steps"]
    rd = _Reader(base_dir, T)
    try:
        horizon = Horizon(T, doc["horizon"].get("delta", 1.0))
    except ModelError as exc:
        raise InstanceValidationError(str(exc)) from exc
    nodes = tuple(doc["nodes"])
    if len(set(nodes)) != len(nodes):
        raise InstanceValidationError("node names must be unique", "nodes")
    known = set(nodes)

    sc = doc["scenarios"]
    phi = sc.get("phi")
    try:
        scenarios = ScenarioSet(np.asarray(sc["probabilities"], dtype=float))
        spec = FluctuationSpec(phi, tuple(sc["probabilities"])) if phi is not None else None
    except ModelError as exc:
        raise InstanceValidationError(str(exc).split(": ", 1)[-1], "scenarios") from exc

    for name in doc["demand"]:
        if name not in known:
            raise InstanceReferenceError(f"unknown node {name!r}", f"demand.{name}")
    alpha, beta = [], []
    for node in nodes:
        path = f"demand.{node}"
        entry = doc["demand"].get(node)
        if entry is None:
            raise InstanceValidationError("missing demand curve", path)
        if "calibration" in entry:
            if "alpha" in entry or "beta" in entry:
                raise InstanceValidationError("give alpha/beta or calibration, not both", path)
            cal = entry["calibration"]
            p = rd.series(cal["p_ref"], path + ".calibration.p_ref", node)
            q = rd.series(cal["q_ref"], path + ".calibration.q_ref", node)
            e = rd.series(cal["elasticity"], path + ".calibration.elasticity", node)
            _check_positive(p, path + ".calibration.p_ref")
            _check_positive(q, path + ".calibration.q_ref")
            _check_positive(-e, path + ".calibration.elasticity")
            a, b = calibrate_demand(p, q, e)
        elif "alpha" in entry and "beta" in entry:
            a = rd.series(entry["alpha"], path + ".alpha", node)
            b = rd.series(entry["beta"], path + ".beta", node)
        else:
            raise InstanceValidationError("need alpha and beta, or a calibration block", path)
        _check_positive(a, path + ".alpha")
        _check_positive(b, path + ".beta")
        alpha.append(a)
        beta.append(b)
    demand = DemandCurve(np.vstack(alpha), np.vstack(beta))

    def ref(node, path):
        if node not in known:
            raise InstanceReferenceError(f"unknown node {node!r}", path)

    def make(cls, path, **kw):
        try:
            return cls(**kw)
        except ModelError as exc:
            suffix = exc.path.split(".", 1)[1] if "." in exc.path else ""
            raise InstanceValidationError(str(exc).split(": ", 1)[-1],
                                          f"{path}.{suffix}" if suffix else path) from exc

    gens = []
    for k, g in enumerate(doc.get("generators", [])):
        path = f"generators[{k}]"
        ref(g["node"], path + ".node")
        gens.append(make(ClassicalGenerator, path, name=g["name"], node=g["node"], capacity=g["capacity"],
                         marginal_cost=g["marginal_cost"], ramp_up=g.get("ramp_up", math.inf),
                         ramp_down=g.get("ramp_down", math.inf)))
    winds = []
    for k, m in enumerate(doc.get("wind", [])):
        path = f"wind[{k}]"
        ref(m["node"], path + ".node")
        if ("base" in m) == ("availability" in m):
            raise InstanceValidationError("give exactly one of base and availability", path)
        if "base" in m:
            if spec is None:
                raise InstanceValidationError("a base profile needs scenarios.phi", path + ".base")
            base = rd.series(m["base"], path + ".base", m["node"])
            try:
                grid, _ = build_wind_scenarios(base, spec)
            except ModelError as exc:
                raise InstanceValidationError(str(exc).split(": ", 1)[-1], path + ".base") from exc
        else:
            grid = np.asarray(m["availability"], dtype=float)
            if grid.shape != (T, scenarios.n_scenarios):
                raise InstanceValidationError(
                    f"availability must be {T} rows of {scenarios.n_scenarios} values", path + ".availability")
        winds.append(make(WindFirm, path, name=m["name"], node=m["node"], availability=grid))
    stores = []
    for k, s in enumerate(doc.get("storage", [])):
        path = f"storage[{k}]"
        ref(s["node"], path + ".node")
        kw = {key: s[key] for key in ("capacity", "op_cost", "eff_dis", "eff_ch", "rate_dis", "rate_ch")
              if key in s}
        stores.append(make(StorageFirm, path, name=s["name"], node=s["node"],
                           regulated=_mode(s, "strategic"), **kw))
    lines = []
    for k, l in enumerate(doc.get("lines", [])):
        path = f"lines[{k}]"
        ref(l["from"], path + ".from")
        ref(l["to"], path + ".to")
        lines.append(make(TransmissionLine, path, name=l["name"], from_node=l["from"], to_node=l["to"],
                          capacity=l["capacity"], regulated=_mode(l, "regulated"),
                          derating=l.get("derating", 1.0)))
    try:
        return Network(nodes, demand, horizon, scenarios, gens, winds, stores, lines,
                       name=doc.get("name", "network"))
    except DanglingReferenceError as exc:
        raise InstanceReferenceError(str(exc)) from exc
    except ModelError as exc:
        raise InstanceValidationError(str(exc)) from exc


def parse_instance(doc, base_dir=".", source: str = "") -> Instance:
    """Validate an already decoded instance document."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise InstanceValidationError(err.message, _json_path(err.absolute_path) or "<root>")
    network = _build(doc, Path(base_dir))
    solver = dict(doc.get("solver", {}))
    if "ordering" in solver:
        solver["ordering"] = tuple(solver["ordering"])
    try:
        SolverConfig(**solver)
    except (TypeError, ValueError) as exc:
        raise InstanceValidationError(str(exc), "solver") from exc
    sweep = dict(doc.get("sweep", {}))
    if "node" in sweep and sweep["node"] not in network.nodes:
        raise InstanceReferenceError(f"unknown node {sweep['node']!r}", "sweep.node")
    return Instance(network, solver, sweep, source)


def load_instance(path) -> Instance:
    """Read, validate and assemble an instance file.

    Raises :class:`InstanceParseError`, :class:`InstanceValidationError` or
    :class:`InstanceReferenceError`; each carries the offending field path
    and a distinct ``exit_code``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InstanceParseError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_instance(doc, path.parent, str(path))


# ---------------------------------------------------------------------------
# writing instances back out
# ---------------------------------------------------------------------------


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def instance_document(network: Network, solver: dict | None = None, sweep: dict | None = None) -> dict:
    """Explicit (already calibrated, scenario-expanded) document for ``network``."""
    enc = {0: "strategic", 1: "regulated"}
    doc = {
        "name": network.name,
        "horizon": {"n_steps": network.horizon.n_steps, "delta": network.horizon.delta},
        "nodes": list(network.nodes),
        "scenarios": {"probabilities": network.scenarios.probabilities.tolist()},
        "demand": {n: {"alpha": network.demand.alpha[i].tolist(), "beta": network.demand.beta[i].tolist()}
                   for i, n in enumerate(network.nodes)},
        "generators": [],
        "wind": [{"name": m.name, "node": m.node, "availability": m.availability.tolist()}
                 for m in network.wind_firms],
        "storage": [{"name": s.name, "node": s.node, "capacity": s.capacity, "op_cost": s.op_cost,
                     "eff_dis": s.eff_dis, "eff_ch": s.eff_ch, "rate_dis": s.rate_dis, "rate_ch": s.rate_ch,
                     "mode": enc[s.regulated]} for s in network.storage_firms],
        "lines": [{"name": l.name, "from": l.from_node, "to": l.to_node, "capacity": l.capacity,
                   "derating": l.derating, "mode": enc[l.regulated]} for l in network.lines],
    }
    for g in network.generators:
        entry = {"name": g.name, "node": g.node, "capacity": g.capacity, "marginal_cost": g.marginal_cost}
        for key in ("ramp_up", "ramp_down"):
            if _num(getattr(g, key)) is not None:
                entry[key] = getattr(g, key)
        doc["generators"].append(entry)
    if solver:
        doc["solver"] = {k: list(v) if isinstance(v, tuple) else v for k, v in solver.items()}
    if sweep:
        doc["sweep"] = dict(sweep)
    return doc


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def dump_instance(network: Network, path, solver: dict | None = None, sweep: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(_dumps(instance_document(network, solver, sweep)))
    return path


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass
class ResultBundle:
    network: Network
    config: SolverConfig
    command: str = "solve"
    equilibrium: EquilibriumResult | None = None
    sizing: object = None  # SizingResult
    curve: list | None = None  # CurvePoint list
    metadata: dict = field(default_factory=dict)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _price_rows(network, prices):
    I, T, W = prices.shape
    for i in range(I):
        for t in range(T):
            for w in range(W):
                yield network.nodes[i], t + 1, w + 1, prices[i, t, w]


def _strategy_rows(network, profile: StrategyProfile):
    T, W = network.horizon.n_steps, network.scenarios.n_scenarios
    blocks = ([(g.name, "q_cg", profile.q_cg[n]) for n, g in enumerate(network.generators)]
              + [(m.name, "q_wg", profile.q_wg[k]) for k, m in enumerate(network.wind_firms)]
              + [(s.name, var, getattr(profile, var)[k]) for k, s in enumerate(network.storage_firms)
                 for var in ("q_dis", "q_ch", "q_s")]
              + [(l.name, "q_tr", profile.q_tr[k]) for k, l in enumerate(network.lines)])
    for name, var, grid in blocks:
        for t in range(T):
            for w in range(W):
                yield name, var, t + 1, w + 1, grid[t, w]


def _trace_rows(network, trace, sigma0):
    nodes = [s.node for s in network.storage_firms]
    for k, p in enumerate(trace):
        caps = [p.capacities.get(n, 0.0) for n in nodes]
        mv = p.max_variance if p.converged else float("nan")
        yield [k, p.total, *caps, p.converged, mv, math.sqrt(mv) if p.converged else mv,
               p.meets(sigma0) if sigma0 is not None else ""]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_hash(config: SolverConfig) -> str:
    blob = json.dumps({k: list(v) if isinstance(v, tuple) else v for k, v in asdict(config).items()},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def emit_results(bundle: ResultBundle, out_dir) -> list:
    """Write the bundle's tables and manifest to ``out_dir``; returns the written paths.

    Byte layout depends only on the bundle contents (no timestamps).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    net = bundle.network
    written = [dump_instance(net, out / "instance.json")]
    manifest = {
        "command": bundle.command,
        "instance": net.name,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(bundle.config).items()},
        "config_hash": config_hash(bundle.config),
        "seed": bundle.config.seed,
        "versions": {"storvol": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    manifest.update(bundle.metadata)
    eq = bundle.equilibrium
    if eq is not None:
        net = eq.network
        written[0] = dump_instance(net, out / "instance.json")
        prices = eq.prices
        _write_csv(out / "prices.csv", ["node", "t", "scenario", "price"], _price_rows(net, prices))
        _write_csv(out / "strategies.csv", ["firm", "variable", "t", "scenario", "value"],
                   _strategy_rows(net, eq.profile))
        var = price_variance(prices, net.scenarios)
        _write_csv(out / "variance.csv", ["node", "t", "variance"],
                   ((n, t + 1, var[i, t]) for i, n in enumerate(net.nodes) for t in range(var.shape[1])))
        summ = summary_metrics(prices, net.scenarios, net.horizon)
        _write_csv(out / "summary.csv", ["node", "peak_price", "daily_average", "max_variance", "sqrt_volatility"],
                   ((n, summ.peak[i], summ.daily_average[i], summ.max_variance[i], summ.sqrt_volatility[i])
                    for i, n in enumerate(net.nodes)))
        written += [out / f for f in ("prices.csv", "strategies.csv", "variance.csv", "summary.csv")]
        manifest["equilibrium"] = {"converged": bool(eq.converged), "iterations": eq.iterations,
                                   "kkt_residual": eq.kkt_residual, "kkt": asdict(eq.report),
                                   "distinct_equilibria": len(eq.distinct_equilibria),
                                   "storage_capacities": net.storage_capacities()}
    cap_cols = [f"capacity_{s.node}" for s in net.storage_firms]
    if bundle.sizing is not None:
        sz = bundle.sizing
        _write_csv(out / "sizing_trace.csv",
                   ["point", "total_capacity", *cap_cols, "converged", "max_variance", "sqrt_volatility",
                    "meets_target"], _trace_rows(net, sz.trace, sz.sigma0_sq))
        written.append(out / "sizing_trace.csv")
        manifest["sizing"] = {"feasible": sz.feasible, "capacities": sz.capacities, "total": sz.total,
                              "sigma0_sq": sz.sigma0_sq, "baseline_max_variance": float(np.max(sz.baseline_variance)),
                              "halted": sz.halted, "message": sz.message, "points": len(sz.trace)}
    if bundle.curve is not None:
        rows = []
        for k, c in enumerate(bundle.curve):
            caps = [c.point.capacities.get(s.node, 0.0) for s in net.storage_firms]
            rows.append([k, c.capacity, *caps, c.converged, c.max_variance, c.sqrt_volatility,
                         c.peak_price, c.daily_average])
        _write_csv(out / "volatility_curve.csv",
                   ["point", "total_capacity", *cap_cols, "converged", "max_variance", "sqrt_volatility",
                    "peak_price", "daily_average"], rows)
        written.append(out / "volatility_curve.csv")
    manifest["files"] = {p.name: _sha256(p) for p in written}
    (out / "manifest.json").write_text(_dumps(manifest))
    written.append(out / "manifest.json")
    return written


# ---------------------------------------------------------------------------
# reading results back (consistency audit)
# ---------------------------------------------------------------------------


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_profile(network: Network, path) -> StrategyProfile:
    arrays = {k: np.array(v, dtype=float) for k, v in StrategyProfile.zeros(network).arrays().items()}
    index = {}
    for n, g in enumerate(network.generators):
        index[g.name, "q_cg"] = n
    for k, m in enumerate(network.wind_firms):
        index[m.name, "q_wg"] = k
    for k, s in enumerate(network.storage_firms):
        for var in ("q_dis", "q_ch", "q_s"):
            index[s.name, var] = k
    for k, l in enumerate(network.lines):
        index[l.name, "q_tr"] = k
    for row in _read_csv(Path(path)):
        key = (row["firm"], row["variable"])
        if key not in index:
            raise InstanceReferenceError(f"unknown firm/variable {key}", str(path))
        arrays[row["variable"]][index[key], int(row["t"]) - 1, int(row["scenario"]) - 1] = float(row["value"])
    return StrategyProfile(**arrays)


@dataclass(frozen=True)
class Audit:
    network: Network
    summary: object  # PriceSummary recomputed from prices.csv
    price_error: float  # worst relative gap between prices.csv and prices implied by strategies.csv
    summary_error: float  # worst relative gap between summary.csv and the recomputed summary

    def consistent(self, tol: float = 1e-9) -> bool:
        return self.price_error <= tol and self.summary_error <= tol


def audit_results(out_dir) -> Audit:
    out = Path(out_dir)
    for name in ("instance.json", "prices.csv", "strategies.csv", "summary.csv"):
        if not (out / name).is_file():
            raise InstanceParseError(f"{out / name} is missing")
    net = load_instance(out / "instance.json").network
    I, T, W = net.shape
    prices = np.full((I, T, W), np.nan)
    for row in _read_csv(out / "prices.csv"):
        prices[net.node_index[row["node"]], int(row["t"]) - 1, int(row["scenario"]) - 1] = float(row["price"])
    implied = nodal_prices(read_profile(net, out / "strategies.csv"), net)
    price_err = float(np.nanmax(np.abs(prices - implied) / np.abs(implied))) if np.all(np.isfinite(prices)) \
        else math.inf
    summ = summary_metrics(prices, net.scenarios, net.horizon)
    worst = 0.0
    for row in _read_csv(out / "summary.csv"):
        i = net.node_index[row["node"]]
        for col, val in (("peak_price", summ.peak[i]), ("daily_average", summ.daily_average[i]),
                         ("max_variance", summ.max_variance[i])):
            worst = max(worst, abs(float(row[col]) - val) / max(abs(val), 1e-300))
    return Audit(net, summ, price_err, worst)
