"""Damped Gauss-Seidel best-response iteration for the lower-level game."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from ..market import MultiplierSet, Network, StrategyProfile, injections, nodal_prices, price_variance
from .best_response import (best_response_classical, best_response_storage, best_response_transmission,
                            best_response_wind, tidy_storage)
from .ipm import SubsolverError
from .kkt import KKTReport, kkt_report, recover_multipliers

log = logging.getLogger(__name__)

KINDS = ("classical", "wind", "storage", "transmission")

ENV_OVERRIDES = {
    "STORVOL_TOL_STRATEGY": ("tol_strategy", float),
    "STORVOL_TOL_KKT": ("tol_kkt", float),
    "STORVOL_TOL_COMPLEMENTARITY": ("tol_complementarity", float),
    "STORVOL_MAX_ITERS": ("max_iters", int),
    "STORVOL_DAMPING": ("damping", float),
    "STORVOL_SUBSOLVER_TOL": ("subsolver_tol", float),
}


class ConvergenceError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class SolverConfig:
    tol_strategy: float = 1e-6
    tol_kkt: float = 1e-6
    # primal violations and complementarity products are held to a tighter bound
    tol_complementarity: float = 1e-9
    max_iters: int = 10000
    damping: float = 0.5
    ordering: tuple = KINDS
    subsolver_tol: float = 1e-10
    multistart: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ordering", tuple(self.ordering))
        if not (self.tol_strategy > 0 and self.tol_kkt > 0 and self.tol_complementarity > 0
                and self.subsolver_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iters < 1 or self.multistart < 1:
            raise ValueError("max_iters and multistart must be >= 1")
        if sorted(self.ordering) != sorted(KINDS):
            raise ValueError(f"ordering must be a permutation of {KINDS}")

    @classmethod
    def from_env(cls, environ=None, **overrides) -> "SolverConfig":
        environ = os.environ if environ is None else environ
        kwargs = {}
        for var, (name, cast) in ENV_OVERRIDES.items():
            if var in environ:
                kwargs[name] = cast(environ[var])
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


@dataclass(frozen=True)
class EquilibriumResult:
    network: Network = field(repr=False)
    profile: StrategyProfile = field(repr=False)
    prices: np.ndarray = field(repr=False)
    multipliers: MultiplierSet = field(repr=False)
    kkt_residual: float
    iterations: int
    converged: bool
    report: KKTReport
    trace: tuple = field(default=(), repr=False)
    distinct_equilibria: tuple = field(default=(), repr=False)

    @property
    def variance(self) -> np.ndarray:
        """Scenario variance of price per (node, t)."""
        return price_variance(self.prices, self.network.scenarios)

    @property
    def max_variance(self) -> float:
        return float(np.max(self.variance))


class _State:
    """Mutable working copy of a profile plus the nodal injection it implies."""

    def __init__(self, network: Network, profile: StrategyProfile):
        self.net = network
        for k, v in profile.arrays().items():
            setattr(self, k, v)
        self.inj = injections(profile, network)
        # last undamped best response per firm; sits on the right face for the next solve
        self.warm = {}

    def profile(self) -> StrategyProfile:
        return StrategyProfile(self.q_cg, self.q_wg, self.q_dis, self.q_ch, self.q_s, self.q_tr)


def _initial_profile(network: Network, k: int, seed: int) -> StrategyProfile:
    if k == 0:
        return StrategyProfile.zeros(network)
    rng = np.random.default_rng(seed + k)
    _, T, W = network.shape
    zero = StrategyProfile.zeros(network).arrays()
    q_cg = np.stack([rng.uniform(0, g.capacity, (T, W)) for g in network.generators]) \
        if network.generators else zero["q_cg"]
    q_tr = np.stack([rng.uniform(-l.limit, l.limit, (T, W)) for l in network.lines]) \
        if network.lines else zero["q_tr"]
    return replace(StrategyProfile.zeros(network), q_cg=q_cg, q_tr=q_tr)


def _sweep(state: _State, config: SolverConfig, damping: float) -> float:
    net = state.net
    change = 0.0
    tol = config.subsolver_tol
    for kind in config.ordering:
        if kind == "classical":
            for n, gen in enumerate(net.generators):
                i = net.gen_node[n]
                old = state.q_cg[n]
                br = best_response_classical(gen, state.inj[i] - old, net, tol=tol,
                                             warm=state.warm.get(("classical", n), old))
                state.warm["classical", n] = br
                new = old + damping * (br - old)
                change = max(change, float(np.max(np.abs(new - old))))
                state.inj[i] += new - old
                state.q_cg[n] = new
        elif kind == "wind":
            for m, firm in enumerate(net.wind_firms):
                i = net.wind_node[m]
                old = state.q_wg[m]
                new = best_response_wind(firm, state.inj[i] - old, net)
                change = max(change, float(np.max(np.abs(new - old))))
                state.inj[i] += new - old
                state.q_wg[m] = new
        elif kind == "storage":
            for k, firm in enumerate(net.storage_firms):
                i = net.storage_node[k]
                old_dis, old_ch, old_s = state.q_dis[k], state.q_ch[k], state.q_s[k]
                dis, ch, _ = best_response_storage(firm, state.inj[i] - old_s, net, tol=tol,
                                                   warm=state.warm.get(("storage", k), (old_dis, old_ch)))
                state.warm["storage", k] = (dis, ch)
                dis = old_dis + damping * (dis - old_dis)
                ch = old_ch + damping * (ch - old_ch)
                dis, ch = tidy_storage(dis, ch, firm, net.horizon.delta)
                qs = firm.eff_dis * dis - ch / firm.eff_ch
                change = max(change, float(np.max(np.abs(dis - old_dis))), float(np.max(np.abs(ch - old_ch))))
                state.inj[i] += qs - old_s
                state.q_dis[k], state.q_ch[k], state.q_s[k] = dis, ch, qs
        else:
            for l, line in enumerate(net.lines):
                i, j = net.line_from[l], net.line_to[l]
                old = state.q_tr[l]
                br = best_response_transmission(line, state.inj[i] - old, state.inj[j] + old, net, warm=old)
                new = old + damping * (br - old)
                change = max(change, float(np.max(np.abs(new - old))))
                state.inj[i] += new - old
                state.inj[j] -= new - old
                state.q_tr[l] = new
    return change


def _run(network: Network, config: SolverConfig, start: StrategyProfile) -> EquilibriumResult:
    state = _State(network, start)
    trace = []
    converged = False
    report = None
    mu = None
    it = 0
    for it in range(1, config.max_iters + 1):
        # the first sweep is undamped so that every start becomes feasible at once
        change = _sweep(state, config, 1.0 if it == 1 else config.damping)
        trace.append(change)
        if change <= config.tol_strategy:
            # damped averages leave ~1e-12 drift off active bounds; finish on exact best responses
            if config.damping < 1.0:
                trace.append(_sweep(state, config, 1.0))
            profile = state.profile()
            mu = recover_multipliers(network, profile)
            report = kkt_report(network, profile, mu)
            if (report.residual <= config.tol_kkt and report.primal <= config.tol_complementarity
                    and report.complementarity <= config.tol_complementarity):
                converged = True
                break
    profile = state.profile()
    if report is None or not converged:
        mu = recover_multipliers(network, profile)
        report = kkt_report(network, profile, mu)
        log.warning("equilibrium not reached after %d sweeps (last change %.3e, kkt %.3e)",
                    it, trace[-1], report.residual)
    return EquilibriumResult(network, profile, nodal_prices(profile, network), mu, report.residual,
                             it, converged, report, tuple(trace))


def solve_equilibrium(network: Network, config: SolverConfig | None = None,
                      start: StrategyProfile | None = None) -> EquilibriumResult:
    """Nash equilibrium of the market for the network's current storage capacities.

    With ``config.multistart > 1`` further runs start from seeded random
    profiles; the returned result is the run from ``start`` (zero by
    default) and ``distinct_equilibria`` lists every converged profile that
    differs from the others by more than 1 MW.
    """
    config = config or SolverConfig()
    try:
        base = _run(network, config, start if start is not None else StrategyProfile.zeros(network))
    except SubsolverError as exc:
        raise ConvergenceError(f"best-response subproblem failed: {exc}") from exc
    found = [base.profile] if base.converged else []
    for k in range(1, config.multistart):
        try:
            other = _run(network, config, _initial_profile(network, k, config.seed))
        except SubsolverError:
            log.warning("multistart run %d: subsolver failure", k)
            continue
        if other.converged and all(other.profile.distance(p) > 1.0 for p in found):
            found.append(other.profile)
    return replace(base, distinct_equilibria=tuple(found))
