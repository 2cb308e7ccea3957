"""Smallest storage build that keeps every nodal price variance under a target.

Capacities are increased stepwise from zero and the lower-level market is
re-solved at each point.  Points are independent solves, so they can be farmed
out to worker processes; decisions are always taken on the results in sweep
order, so the outcome does not depend on the number of workers.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import ConvergenceError, EquilibriumResult, SolverConfig, solve_equilibrium
from .market import ModelError, Network, PriceSummary, summary_metrics

log = logging.getLogger(__name__)

ALLOCATIONS = ("single-node", "uniform", "coordinate-descent")
STORAGE_MODES = {"strategic": 0, "regulated": 1}


class SizingError(RuntimeError):
    """No usable sweep point (the zero-storage market itself failed to solve)."""


@dataclass(frozen=True)
class VolatilityTarget:
    """Either an absolute variance cap or a percentage cut of the zero-storage maximum."""

    sigma0_sq: float | None = None
    reduction_pct: float | None = None

    def __post_init__(self):
        if (self.sigma0_sq is None) == (self.reduction_pct is None):
            raise ModelError("give exactly one of sigma0_sq and reduction_pct", "target")
        if self.sigma0_sq is not None and not self.sigma0_sq >= 0:
            raise ModelError("sigma0_sq must be >= 0", "target.sigma0_sq")
        if self.reduction_pct is not None and not 0 <= self.reduction_pct <= 100:
            raise ModelError("reduction_pct must lie in [0, 100]", "target.reduction_pct")

    def resolve(self, baseline_max_variance: float) -> float:
        if self.sigma0_sq is not None:
            return float(self.sigma0_sq)
        return (1.0 - self.reduction_pct / 100.0) * float(baseline_max_variance)


@dataclass(frozen=True)
class SweepPlan:
    step: float
    max_capacity: float
    allocation: str = "single-node"
    node: str | None = None

    def __post_init__(self):
        if not self.step > 0:
            raise ModelError("step must be > 0", "plan.step")
        if not self.max_capacity >= self.step:
            raise ModelError("max_capacity must be >= step", "plan.max_capacity")
        if self.allocation not in ALLOCATIONS:
            raise ModelError(f"allocation must be one of {ALLOCATIONS}", "plan.allocation")

    @property
    def n_steps(self) -> int:
        return int(np.floor(self.max_capacity / self.step + 1e-9))

    def storage_nodes(self, network: Network) -> tuple:
        nodes = tuple(s.node for s in network.storage_firms)
        if not nodes:
            raise ModelError("the network has no storage firm to size", "storage_firms")
        if self.allocation != "single-node":
            return nodes
        if self.node is None:
            if len(nodes) > 1:
                raise ModelError("several storage nodes; name one for single-node sizing", "plan.node")
            return nodes
        if self.node not in nodes:
            raise ModelError(f"no storage firm at node {self.node!r}", "plan.node")
        return (self.node,)

    def fixed_points(self, network: Network) -> list:
        """Capacity maps along the sweep for the non-adaptive rules."""
        nodes = self.storage_nodes(network)
        every = tuple(s.node for s in network.storage_firms)
        out = []
        for k in range(self.n_steps + 1):
            total = k * self.step
            caps = dict.fromkeys(every, 0.0)
            for n in nodes:
                caps[n] = total / len(nodes)
            out.append(caps)
        return out


@dataclass(frozen=True)
class TracePoint:
    capacities: dict
    variance: np.ndarray | None = field(repr=False)
    converged: bool
    summary: PriceSummary | None = field(default=None, repr=False)
    result: EquilibriumResult | None = field(default=None, repr=False, compare=False)
    message: str = ""

    @property
    def total(self) -> float:
        return float(sum(self.capacities.values()))

    @property
    def max_variance(self) -> float:
        return float(np.max(self.variance)) if self.variance is not None else float("nan")

    def meets(self, sigma0_sq: float) -> bool:
        return self.converged and bool(np.all(self.variance <= sigma0_sq))


@dataclass(frozen=True)
class SizingResult:
    capacities: dict
    feasible: bool
    sigma0_sq: float
    baseline_variance: np.ndarray = field(repr=False)
    trace: tuple = field(default=(), repr=False)
    halted: bool = False
    message: str = ""

    @property
    def total(self) -> float:
        return float(sum(self.capacities.values()))


def volatility_at_capacity(network: Network, capacities: dict, config: SolverConfig | None = None):
    """Per-(node, t) price variance at the equilibrium for the given storage build.

    Returns ``(variance, result)``.  Raises :class:`ConvergenceError` when
    the equilibrium is not reached.
    """
    if any(not v >= 0 for v in capacities.values()):
        raise ModelError("storage capacities must be >= 0", "capacities")
    result = solve_equilibrium(network.with_storage_capacities(capacities), config)
    if not result.converged:
        raise ConvergenceError(f"no equilibrium at capacities {capacities} "
                               f"(kkt residual {result.kkt_residual:.3e})", result)
    return result.variance, result


def _evaluate(network: Network, capacities: dict, config: SolverConfig | None) -> TracePoint:
    try:
        variance, result = volatility_at_capacity(network, capacities, config)
    except ConvergenceError as exc:
        return TracePoint(dict(capacities), None, False, result=exc.result, message=str(exc))
    summary = summary_metrics(result.prices, network.scenarios, network.horizon)
    return TracePoint(dict(capacities), variance, True, summary, result)


class _Pool:
    """Ordered map over sweep points, serial unless more than one worker is asked for."""

    def __init__(self, threads: int):
        self.threads = max(1, int(threads))
        self.executor = ProcessPoolExecutor(self.threads) if self.threads > 1 else None

    def map(self, network, points, config):
        if self.executor is None:
            return [_evaluate(network, p, config) for p in points]
        futures = [self.executor.submit(_evaluate, network, p, config) for p in points]
        return [f.result() for f in futures]

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self.executor is not None:
            self.executor.shutdown()


def _halted(point: TracePoint) -> str:
    log.warning("sweep halted at %s: %s", point.capacities, point.message)
    return f"sweep halted: {point.message}"


def minimal_storage_capacity(network: Network, target: VolatilityTarget, plan: SweepPlan,
                             config: SolverConfig | None = None, threads: int = 1) -> SizingResult:
    """Walk the sweep from zero and stop at the first build meeting the target everywhere."""
    plan.storage_nodes(network)
    with _Pool(threads) as pool:
        if plan.allocation == "coordinate-descent":
            return _greedy(network, target, plan, config, pool)
        points = plan.fixed_points(network)
        baseline = pool.map(network, points[:1], config)[0]
        if not baseline.converged:
            raise SizingError(f"zero-storage market did not solve: {baseline.message}")
        sigma0 = target.resolve(baseline.max_variance)
        trace = [baseline]
        if baseline.meets(sigma0):
            return SizingResult(baseline.capacities, True, sigma0, baseline.variance, tuple(trace))
        rest = points[1:]
        for start in range(0, len(rest), pool.threads):
            for point in pool.map(network, rest[start:start + pool.threads], config):
                trace.append(point)
                if not point.converged:
                    return SizingResult(_best(trace).capacities, False, sigma0, baseline.variance,
                                        tuple(trace), halted=True, message=_halted(point))
                if point.meets(sigma0):
                    return SizingResult(point.capacities, True, sigma0, baseline.variance, tuple(trace))
    return SizingResult(_best(trace).capacities, False, sigma0, baseline.variance, tuple(trace),
                        message="target not met within max_capacity")


def _best(trace) -> TracePoint:
    good = [p for p in trace if p.converged]
    return min(good, key=lambda p: (p.max_variance, p.total))


def _greedy(network, target, plan, config, pool) -> SizingResult:
    """Add one step at a time to whichever node lowers the worst variance most."""
    nodes = plan.storage_nodes(network)
    caps = {s.node: 0.0 for s in network.storage_firms}
    current = pool.map(network, [caps], config)[0]
    if not current.converged:
        raise SizingError(f"zero-storage market did not solve: {current.message}")
    baseline = current.variance
    sigma0 = target.resolve(current.max_variance)
    trace = [current]
    for _ in range(plan.n_steps):
        if current.meets(sigma0):
            break
        candidates = []
        for n in nodes:
            trial = dict(current.capacities)
            trial[n] += plan.step
            candidates.append(trial)
        evaluated = pool.map(network, candidates, config)
        failed = [p for p in evaluated if not p.converged]
        if failed:
            trace.append(failed[0])
            return SizingResult(_best(trace).capacities, False, sigma0, baseline, tuple(trace),
                                halted=True, message=_halted(failed[0]))
        current = min(evaluated, key=lambda p: p.max_variance)  # ties keep node order
        trace.append(current)
    if current.meets(sigma0):
        return SizingResult(current.capacities, True, sigma0, baseline, tuple(trace))
    return SizingResult(_best(trace).capacities, False, sigma0, baseline, tuple(trace),
                        message="target not met within max_capacity")


@dataclass(frozen=True)
class CurvePoint:
    capacity: float
    max_variance: float
    peak_price: float
    daily_average: float
    converged: bool
    point: TracePoint = field(repr=False, compare=False)

    @property
    def sqrt_volatility(self) -> float:
        return float(np.sqrt(self.max_variance))


def volatility_curve(network: Network, plan: SweepPlan, config: SolverConfig | None = None,
                     storage_mode: str | None = None, threads: int = 1, include_baseline: bool = False) -> list:
    """Worst variance, peak and daily average price at ``step, 2*step, ..., max_capacity``.

    ``include_baseline`` prepends the zero-storage point.  Prices are
    reported at the first swept storage node.  Failed points are kept and
    flagged rather than dropped.
    """
    if storage_mode is not None:
        if storage_mode not in STORAGE_MODES:
            raise ModelError(f"storage_mode must be one of {tuple(STORAGE_MODES)}", "storage_mode")
        network = network.with_storage_mode(STORAGE_MODES[storage_mode])
    if plan.allocation == "coordinate-descent":
        raise ModelError("a volatility curve needs a fixed allocation rule", "plan.allocation")
    node = network.node_index[plan.storage_nodes(network)[0]]
    with _Pool(threads) as pool:
        points = plan.fixed_points(network)
        trace = pool.map(network, points if include_baseline else points[1:], config)
    curve = []
    for p in trace:
        if p.converged:
            curve.append(CurvePoint(p.total, p.max_variance, float(p.summary.peak[node]),
                                    float(p.summary.daily_average[node]), True, p))
        else:
            nan = float("nan")
            curve.append(CurvePoint(p.total, nan, nan, nan, False, p))
    return curve
