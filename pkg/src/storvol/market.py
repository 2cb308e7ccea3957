"""Market description, inverse demand, payoffs and price metrics.

Everything here is pure evaluation: no solving happens in this module.
Arrays indexed by firm carry the layout ``(firm, t, w)``; nodal quantities
are ``(node, t, w)`` and demand parameters are ``(node, t)`` (demand does not
depend on the wind scenario).

Transmission convention: for a line ``from_node -> to_node`` the stored flow
``q_tr[l, t, w]`` is the line's injection into ``from_node``.  The mirror
flow into ``to_node`` is ``-q_tr[l, t, w]`` and is never stored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence, Union

import numpy as np

PROB_TOL = 1e-12
VARIANCE_CLAMP = -1e-9


class ModelError(ValueError):
    """Invalid market data.  ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Horizon:
    n_steps: int
    delta: float = 1.0

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ModelError("n_steps must be an integer >= 1", "horizon.n_steps")
        if not self.delta > 0:
            raise ModelError("delta must be > 0", "horizon.delta")


@dataclass(frozen=True)
class ScenarioSet:
    probabilities: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probabilities)
        object.__setattr__(self, "probabilities", p)
        if p.ndim != 1 or p.size == 0:
            raise ModelError("need a non-empty 1-D list", "scenarios.probabilities")
        if np.any(p <= 0):
            raise ModelError("every probability must be > 0", "scenarios.probabilities")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise ModelError(f"probabilities sum to {p.sum()!r}, not 1",
                             "scenarios.probabilities")

    @property
    def n_scenarios(self) -> int:
        return int(self.probabilities.size)


@dataclass(frozen=True)
class DemandCurve:
    """Exponential inverse demand ``P = alpha * exp(-beta * Q)`` per (node, t)."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = _frozen(self.alpha)
        b = _frozen(self.beta)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        if a.shape != b.shape:
            raise ModelError(f"alpha shape {a.shape} != beta shape {b.shape}", "demand")
        for name, arr in (("alpha", a), ("beta", b)):
            bad = np.argwhere(~(arr > 0))
            if bad.size:
                idx = tuple(int(k) for k in bad[0])
                raise ModelError(f"{name} must be > 0 (got {arr[idx]!r})", f"demand.{name}{list(idx)}")


@dataclass(frozen=True)
class ClassicalGenerator:
    name: str
    node: str
    capacity: float
    marginal_cost: float
    ramp_up: float = math.inf
    ramp_down: float = math.inf

    def __post_init__(self):
        for attr in ("capacity", "marginal_cost", "ramp_up", "ramp_down"):
            if not getattr(self, attr) >= 0:
                raise ModelError(f"{attr} must be >= 0", f"generators[{self.name}].{attr}")


@dataclass(frozen=True)
class WindFirm:
    name: str
    node: str
    availability: np.ndarray  # (t, w)

    def __post_init__(self):
        a = _frozen(self.availability)
        object.__setattr__(self, "availability", a)
        if a.ndim != 2:
            raise ModelError("availability must be a (t, w) grid", f"wind_firms[{self.name}].availability")
        if np.any(~(a >= 0)):
            raise ModelError("availability must be >= 0", f"wind_firms[{self.name}].availability")


@dataclass(frozen=True)
class StorageFirm:
    name: str
    node: str
    capacity: float = 0.0
    op_cost: float = 0.0
    eff_dis: float = 1.0
    eff_ch: float = 1.0
    rate_dis: float = 1.0
    rate_ch: float = 1.0
    regulated: int = 0

    def __post_init__(self):
        path = f"storage_firms[{self.name}]"
        if not self.capacity >= 0:
            raise ModelError("capacity must be >= 0", path + ".capacity")
        if not self.op_cost >= 0:
            raise ModelError("op_cost must be >= 0", path + ".op_cost")
        for attr in ("eff_dis", "eff_ch"):
            if not 0 < getattr(self, attr) <= 1:
                raise ModelError(f"{attr} must lie in (0, 1]", f"{path}.{attr}")
        for attr in ("rate_dis", "rate_ch"):
            if not getattr(self, attr) > 0:
                raise ModelError(f"{attr} must be > 0", f"{path}.{attr}")
        if self.regulated not in (0, 1):
            raise ModelError("regulated flag must be 0 or 1", path + ".regulated")


@dataclass(frozen=True)
class TransmissionLine:
    name: str
    from_node: str
    to_node: str
    capacity: float
    regulated: int = 1
    derating: float = 1.0

    def __post_init__(self):
        path = f"lines[{self.name}]"
        if not self.capacity >= 0:
            raise ModelError("capacity must be >= 0", path + ".capacity")
        if self.from_node == self.to_node:
            raise ModelError("a line must join two distinct nodes", path)
        if self.regulated not in (0, 1):
            raise ModelError("regulated flag must be 0 or 1", path + ".regulated")
        if not 0 <= self.derating <= 1:
            raise ModelError("derating must lie in [0, 1]", path + ".derating")

    @property
    def limit(self) -> float:
        """Tradable capacity in MW (nameplate times operating share)."""
        return self.capacity * self.derating


Firm = Union[ClassicalGenerator, WindFirm, StorageFirm, TransmissionLine]


@dataclass(frozen=True)
class Network:
    nodes: tuple
    demand: DemandCurve
    horizon: Horizon
    scenarios: ScenarioSet
    generators: tuple = ()
    wind_firms: tuple = ()
    storage_firms: tuple = ()
    lines: tuple = ()
    name: str = "network"

    def __post_init__(self):
        for attr in ("nodes", "generators", "wind_firms", "storage_firms", "lines"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if not self.nodes:
            raise ModelError("at least one node is required", "nodes")
        if len(set(self.nodes)) != len(self.nodes):
            raise ModelError("node names must be unique", "nodes")
        shape = (len(self.nodes), self.horizon.n_steps)
        if self.demand.alpha.shape != shape:
            raise ModelError(f"demand grid has shape {self.demand.alpha.shape}, expected {shape}", "demand")
        names = [f.name for f in self.firms]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ModelError(f"duplicate firm names {sorted(dup)}", "firms")
        known = set(self.nodes)
        for kind, roster in (("generators", self.generators), ("wind_firms", self.wind_firms),
                             ("storage_firms", self.storage_firms)):
            for f in roster:
                if f.node not in known:
                    raise DanglingReferenceError(f"unknown node {f.node!r}", f"{kind}[{f.name}].node")
        for line in self.lines:
            for end in ("from_node", "to_node"):
                if getattr(line, end) not in known:
                    raise DanglingReferenceError(f"unknown node {getattr(line, end)!r}",
                                                 f"lines[{line.name}].{end}")
        seen = set()
        for s in self.storage_firms:
            if s.node in seen:
                raise ModelError(f"more than one storage firm at node {s.node!r}",
                                 f"storage_firms[{s.name}].node")
            seen.add(s.node)
        tw = (self.horizon.n_steps, self.scenarios.n_scenarios)
        for f in self.wind_firms:
            if f.availability.shape != tw:
                raise ModelError(f"availability shape {f.availability.shape}, expected {tw}",
                                 f"wind_firms[{f.name}].availability")

    # -- convenience views ------------------------------------------------

    @property
    def firms(self) -> tuple:
        return self.generators + self.wind_firms + self.storage_firms + self.lines

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def shape(self) -> tuple:
        """(n_nodes, n_steps, n_scenarios)"""
        return (len(self.nodes), self.horizon.n_steps, self.scenarios.n_scenarios)

    @cached_property
    def node_index(self) -> dict:
        return {n: k for k, n in enumerate(self.nodes)}

    @cached_property
    def gen_node(self) -> np.ndarray:
        return np.array([self.node_index[g.node] for g in self.generators], dtype=int)

    @cached_property
    def wind_node(self) -> np.ndarray:
        return np.array([self.node_index[m.node] for m in self.wind_firms], dtype=int)

    @cached_property
    def storage_node(self) -> np.ndarray:
        return np.array([self.node_index[s.node] for s in self.storage_firms], dtype=int)

    @cached_property
    def line_from(self) -> np.ndarray:
        return np.array([self.node_index[l.from_node] for l in self.lines], dtype=int)

    @cached_property
    def line_to(self) -> np.ndarray:
        return np.array([self.node_index[l.to_node] for l in self.lines], dtype=int)

    def storage_capacities(self) -> dict:
        return {s.node: s.capacity for s in self.storage_firms}

    def with_storage_capacities(self, capacities) -> "Network":
        """Copy of the network with storage capacities replaced.

        ``capacities`` maps node name to MWh; nodes without storage firms are
        rejected, nodes that are omitted keep their current capacity.
        """
        capacities = dict(capacities)
        by_node = {s.node for s in self.storage_firms}
        unknown = set(capacities) - by_node
        if unknown:
            raise ModelError(f"no storage firm at nodes {sorted(unknown)}", "capacities")
        firms = tuple(replace(s, capacity=float(capacities[s.node])) if s.node in capacities else s
                      for s in self.storage_firms)
        return replace(self, storage_firms=firms)

    def with_storage_mode(self, regulated: int) -> "Network":
        firms = tuple(replace(s, regulated=int(regulated)) for s in self.storage_firms)
        return replace(self, storage_firms=firms)

    def with_line_derating(self, derating: float, name: str | None = None) -> "Network":
        """Copy with the derating of every line (or only ``name``) replaced."""
        if name is not None and name not in {l.name for l in self.lines}:
            raise ModelError(f"unknown line {name!r}", "lines")
        lines = tuple(replace(l, derating=float(derating)) if name in (None, l.name) else l
                      for l in self.lines)
        return replace(self, lines=lines)

    def firm_by_name(self, name: str):
        for f in self.firms:
            if f.name == name:
                return f
        raise KeyError(f"unknown firm {name!r}")


class DanglingReferenceError(ModelError):
    """A firm or line refers to a node that does not exist."""


@dataclass(frozen=True)
class StrategyProfile:
    """Decisions of every firm, each array laid out as (firm, t, w)."""

    q_cg: np.ndarray
    q_wg: np.ndarray
    q_dis: np.ndarray
    q_ch: np.ndarray
    q_s: np.ndarray
    q_tr: np.ndarray

    def __post_init__(self):
        for attr in ("q_cg", "q_wg", "q_dis", "q_ch", "q_s", "q_tr"):
            object.__setattr__(self, attr, _frozen(getattr(self, attr)))

    @classmethod
    def zeros(cls, network: Network) -> "StrategyProfile":
        _, T, W = network.shape

        def z(n):
            return np.zeros((n, T, W))

        S = len(network.storage_firms)
        return cls(z(len(network.generators)), z(len(network.wind_firms)), z(S), z(S), z(S),
                   z(len(network.lines)))

    def arrays(self) -> dict:
        return {k: np.array(getattr(self, k)) for k in ("q_cg", "q_wg", "q_dis", "q_ch", "q_s", "q_tr")}

    def flow_into(self, line_index: int, node_index: int, network: Network) -> np.ndarray:
        """Line ``line_index``'s injection into ``node_index`` per (t, w)."""
        if network.line_from[line_index] == node_index:
            return self.q_tr[line_index]
        if network.line_to[line_index] == node_index:
            return -self.q_tr[line_index]
        raise ValueError("node is not an end of this line")

    def distance(self, other: "StrategyProfile") -> float:
        d = 0.0
        for k in ("q_cg", "q_wg", "q_dis", "q_ch", "q_tr"):
            a, b = getattr(self, k), getattr(other, k)
            if a.size:
                d = max(d, float(np.max(np.abs(a - b))))
        return d


@dataclass(frozen=True)
class MultiplierSet:
    """Lagrange multipliers of every firm's problem, laid out like the constraints.

    Sign convention: the Lagrangian is the probability-weighted objective plus
    ``mu * slack`` for every inequality written as ``slack >= 0``.  The storage
    balance multiplier ``s`` enters as ``+ s * (q_s - eff_dis*q_dis + q_ch/eff_ch)``
    and the line multiplier ``tr`` as ``+ tr * (q_ij + q_ji)``; both are free.
    """

    wg_max: np.ndarray
    s: np.ndarray
    dis_max: np.ndarray
    ch_max: np.ndarray
    soc_min: np.ndarray
    soc_max: np.ndarray
    cg_max: np.ndarray
    cg_up: np.ndarray
    cg_dn: np.ndarray
    tr: np.ndarray
    tr_min: np.ndarray
    tr_max: np.ndarray

    INEQUALITY = ("wg_max", "dis_max", "ch_max", "soc_min", "soc_max", "cg_max", "cg_up",
                  "cg_dn", "tr_min", "tr_max")

    def __post_init__(self):
        for f in self.__dataclass_fields__:
            object.__setattr__(self, f, _frozen(getattr(self, f)))

    @classmethod
    def zeros(cls, network: Network) -> "MultiplierSet":
        _, T, W = network.shape
        G, M = len(network.generators), len(network.wind_firms)
        S, L = len(network.storage_firms), len(network.lines)

        def z(n):
            return np.zeros((n, T, W))

        return cls(z(M), z(S), z(S), z(S), z(S), z(S), z(G), z(G), z(G), z(L), z(L), z(L))

    def min_inequality(self) -> float:
        vals = [float(getattr(self, k).min()) for k in self.INEQUALITY if getattr(self, k).size]
        return min(vals) if vals else 0.0


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def price(alpha, beta, total_injection):
    """Nodal price ``alpha * exp(-beta * injection)``; broadcasts over arrays."""
    return alpha * np.exp(-np.multiply(beta, total_injection))


def injections(profile: StrategyProfile, network: Network) -> np.ndarray:
    """Total injection at every (node, t, w)."""
    inj = np.zeros(network.shape)
    if network.generators:
        np.add.at(inj, network.gen_node, profile.q_cg)
    if network.wind_firms:
        np.add.at(inj, network.wind_node, profile.q_wg)
    if network.storage_firms:
        np.add.at(inj, network.storage_node, profile.q_s)
    if network.lines:
        np.add.at(inj, network.line_from, profile.q_tr)
        np.add.at(inj, network.line_to, -profile.q_tr)
    return inj


def nodal_injection(profile: StrategyProfile, network: Network, node, t: int, w: int) -> float:
    """Injection at a single (node, t, w); ``node`` is a name or an index."""
    i = network.node_index[node] if isinstance(node, str) else int(node)
    I, T, W = network.shape
    if not (0 <= i < I and 0 <= t < T and 0 <= w < W):
        raise IndexError(f"index (node={node!r}, t={t}, w={w}) out of range for shape {network.shape}")
    total = 0.0
    for k in np.flatnonzero(network.gen_node == i):
        total += profile.q_cg[k, t, w]
    for k in np.flatnonzero(network.wind_node == i):
        total += profile.q_wg[k, t, w]
    for k in np.flatnonzero(network.storage_node == i):
        total += profile.q_s[k, t, w]
    for k in range(len(network.lines)):
        if network.line_from[k] == i:
            total += profile.q_tr[k, t, w]
        elif network.line_to[k] == i:
            total -= profile.q_tr[k, t, w]
    return float(total)


def nodal_prices(profile: StrategyProfile, network: Network) -> np.ndarray:
    inj = injections(profile, network)
    return network.demand.alpha[:, :, None] * np.exp(-network.demand.beta[:, :, None] * inj)


def price_variance(prices, probs) -> np.ndarray:
    """Scenario variance of price, reduced over the last axis.

    ``probs`` may be a :class:`ScenarioSet` or a probability vector.  Values
    in ``[-1e-9, 0)`` produced by cancellation are clamped to zero.
    """
    p = probs.probabilities if isinstance(probs, ScenarioSet) else np.asarray(probs, dtype=float)
    prices = np.asarray(prices, dtype=float)
    if prices.shape[-1:] != p.shape:
        raise ValueError(f"prices have {prices.shape[-1:]} scenarios, probabilities {p.shape}")
    # centred form with the mean-rounding correction; the raw E[P^2] - E[P]^2 cancels badly
    dev = prices - (prices @ p)[..., None]
    var = (dev ** 2) @ p - (dev @ p) ** 2
    var = np.where((var < 0) & (var >= VARIANCE_CLAMP), 0.0, var)
    var = np.where(np.ptp(prices, axis=-1) == 0, 0.0, var)
    return var if var.ndim else float(var)


def storage_net_flow(q_dis, q_ch, firm: StorageFirm):
    """Net supply ``eff_dis * q_dis - q_ch / eff_ch`` of a storage firm."""
    if np.any(np.asarray(q_dis) < 0) or np.any(np.asarray(q_ch) < 0):
        raise ValueError("charge and discharge levels must be nonnegative")
    return firm.eff_dis * q_dis - q_ch / firm.eff_ch


def state_of_charge(q_ch, q_dis, horizon: Horizon) -> np.ndarray:
    """Stored energy after each step, starting from an empty device.

    Time is the last axis; leading axes are carried through.
    """
    q_ch = np.asarray(q_ch, dtype=float)
    q_dis = np.asarray(q_dis, dtype=float)
    if q_ch.shape != q_dis.shape or q_ch.shape[-1] != horizon.n_steps:
        raise ValueError(f"series shapes {q_ch.shape}, {q_dis.shape} do not match "
                         f"horizon of {horizon.n_steps} steps")
    return np.cumsum(q_ch - q_dis, axis=-1) * horizon.delta


def canonicalize_storage(q_dis: float, q_ch: float, firm: StorageFirm) -> tuple:
    """Remove simultaneous charging and discharging without changing net flow."""
    if q_dis < 0 or q_ch < 0:
        raise ValueError("charge and discharge levels must be nonnegative")
    if q_dis > 0 and q_ch > 0:
        loss = firm.eff_dis * firm.eff_ch
        net = storage_net_flow(q_dis, q_ch, firm)
        if net > 0:
            return (q_dis - q_ch / loss, 0.0)
        if net < 0:
            return (0.0, q_ch - q_dis * loss)
        return (0.0, 0.0)
    return (q_dis, q_ch)


def _locate(network: Network, firm) -> tuple:
    name = firm if isinstance(firm, str) else firm.name
    for kind, roster in (("cg", network.generators), ("wg", network.wind_firms),
                         ("s", network.storage_firms), ("tr", network.lines)):
        for k, f in enumerate(roster):
            if f.name == name:
                return kind, k
    raise KeyError(f"unknown firm {name!r}")


def firm_payoff(firm, profile: StrategyProfile, network: Network) -> float:
    """Expected objective value of ``firm`` (object or name) over the horizon."""
    kind, k = _locate(network, firm)
    P = nodal_prices(profile, network)
    psi = network.scenarios.probabilities
    alpha, beta = network.demand.alpha, network.demand.beta
    if kind == "cg":
        g = network.generators[k]
        i = network.gen_node[k]
        per_tw = (P[i] - g.marginal_cost) * profile.q_cg[k]
    elif kind == "wg":
        per_tw = P[network.wind_node[k]] * profile.q_wg[k]
    elif kind == "s":
        s = network.storage_firms[k]
        i = network.storage_node[k]
        qs = profile.q_s[k]
        per_tw = (P[i] * qs - s.op_cost * (profile.q_dis[k] + profile.q_ch[k])
                  - s.regulated * (P[i] * qs + P[i] / beta[i][:, None]))
    else:
        line = network.lines[k]
        i, j = network.line_from[k], network.line_to[k]
        q_ij = profile.q_tr[k]
        trade = P[j] * (-q_ij) + P[i] * q_ij
        welfare = -P[j] / beta[j][:, None] - P[i] / beta[i][:, None]
        per_tw = (1 - line.regulated) * trade + line.regulated * welfare
    return float(per_tw.sum(axis=0) @ psi)


@dataclass(frozen=True)
class PriceSummary:
    peak: np.ndarray
    daily_average: np.ndarray
    max_variance: np.ndarray

    @property
    def sqrt_volatility(self) -> np.ndarray:
        return np.sqrt(self.max_variance)


def summary_metrics(prices, probs, horizon: Horizon) -> PriceSummary:
    """Peak, time-averaged expected price and worst-hour variance per node."""
    prices = np.asarray(prices, dtype=float)
    p = probs.probabilities if isinstance(probs, ScenarioSet) else np.asarray(probs, dtype=float)
    if prices.size == 0:
        raise ValueError("empty price field")
    if prices.ndim != 3 or prices.shape[1] != horizon.n_steps or prices.shape[2] != p.size:
        raise ValueError(f"price field shape {prices.shape} does not match "
                         f"({horizon.n_steps} steps, {p.size} scenarios)")
    peak = prices.max(axis=(1, 2))
    average = (prices @ p).sum(axis=1) / horizon.n_steps
    max_var = np.asarray(price_variance(prices, p)).max(axis=1)
    return PriceSummary(peak, average, max_var)
