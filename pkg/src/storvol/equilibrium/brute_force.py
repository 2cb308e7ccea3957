"""Grid-search Nash equilibrium for tiny instances (test oracle).

Each firm's strategy is restricted to multiples of ``grid_step`` and its
best response is found by exhaustive enumeration; firms are updated in
sweep order until nobody moves.  Nothing here shares code with the
continuous best responses.
"""
from __future__ import annotations

import itertools

import numpy as np

from ..market import Network, StrategyProfile, firm_payoff, injections

MAX_CANDIDATES = 4_000_000


class CycleError(RuntimeError):
    """Grid best responses revisit a profile without reaching a fixed point."""


def _grid(upper: float, step: float) -> np.ndarray:
    return np.arange(int(np.floor(upper / step + 1e-9)) + 1) * step


def _joint(axes):
    n = int(np.prod([a.size for a in axes]))
    if n > MAX_CANDIDATES:
        raise ValueError(f"{n} joint grid points exceed the enumeration limit; use a coarser grid")
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _classical(net, n, resid, step):
    gen = net.generators[n]
    i = net.gen_node[n]
    a, b = net.demand.alpha[i], net.demand.beta[i]
    T, W = resid.shape
    grid = _grid(gen.capacity, step)
    out = np.zeros((T, W))
    ramped = T > 1 and (np.isfinite(gen.ramp_up) or np.isfinite(gen.ramp_down))
    for w in range(W):
        if not ramped:
            for t in range(T):
                val = (a[t] * np.exp(-b[t] * (resid[t, w] + grid)) - gen.marginal_cost) * grid
                out[t, w] = grid[np.argmax(val)]
            continue
        cand = _joint([grid] * T)
        d = np.diff(cand, axis=1)
        ok = np.all(d <= gen.ramp_up + 1e-9, axis=1) & np.all(-d <= gen.ramp_down + 1e-9, axis=1)
        cand = cand[ok]
        val = ((a * np.exp(-b * (resid[:, w] + cand)) - gen.marginal_cost) * cand).sum(axis=1)
        out[:, w] = cand[np.argmax(val)]
    return out


def _wind(net, m, resid, step):
    firm = net.wind_firms[m]
    i = net.wind_node[m]
    a, b = net.demand.alpha[i], net.demand.beta[i]
    T, W = resid.shape
    out = np.zeros((T, W))
    for t, w in itertools.product(range(T), range(W)):
        grid = _grid(firm.availability[t, w], step)
        val = a[t] * np.exp(-b[t] * (resid[t, w] + grid)) * grid
        out[t, w] = grid[np.argmax(val)]
    return out


def _storage(net, k, resid, step):
    firm = net.storage_firms[k]
    i = net.storage_node[k]
    a, b = net.demand.alpha[i], net.demand.beta[i]
    T, W = resid.shape
    dis = np.zeros((T, W))
    ch = np.zeros((T, W))
    if firm.capacity <= 0:
        return dis, ch
    gd = _grid(firm.rate_dis * firm.capacity, step)
    gc = _grid(firm.rate_ch * firm.capacity, step)
    cand = _joint([gd] * T + [gc] * T)
    cd, cc = cand[:, :T], cand[:, T:]
    soc = np.cumsum(cc - cd, axis=1) * net.horizon.delta
    ok = np.all(soc >= -1e-9, axis=1) & np.all(soc <= firm.capacity + 1e-9, axis=1)
    cd, cc = cd[ok], cc[ok]
    x = firm.eff_dis * cd - cc / firm.eff_ch
    for w in range(W):
        P = a * np.exp(-b * (resid[:, w] + x))
        val = (P * x - firm.op_cost * (cd + cc) - firm.regulated * (P * x + P / b)).sum(axis=1)
        best = np.argmax(val)
        dis[:, w], ch[:, w] = cd[best], cc[best]
    return dis, ch


def _line(net, l, r_i, r_j, step):
    line = net.lines[l]
    i, j = net.line_from[l], net.line_to[l]
    ai, bi = net.demand.alpha[i], net.demand.beta[i]
    aj, bj = net.demand.alpha[j], net.demand.beta[j]
    pos = _grid(line.limit, step)
    grid = np.concatenate([pos, -pos[1:]])
    grid = grid[np.lexsort((grid, np.abs(grid)))]  # ties favour the smaller flow
    T, W = r_i.shape
    out = np.zeros((T, W))
    for t, w in itertools.product(range(T), range(W)):
        Pi = ai[t] * np.exp(-bi[t] * (r_i[t, w] + grid))
        Pj = aj[t] * np.exp(-bj[t] * (r_j[t, w] - grid))
        val = (1 - line.regulated) * (Pi - Pj) * grid + line.regulated * (-Pi / bi[t] - Pj / bj[t])
        out[t, w] = grid[np.argmax(val)]
    return out


def _round(net, arrays, step, ordering):
    def inj():
        return injections(StrategyProfile(**arrays), net)

    for kind in ordering:
        if kind == "classical":
            for n in range(len(net.generators)):
                r = inj()[net.gen_node[n]] - arrays["q_cg"][n]
                arrays["q_cg"][n] = _classical(net, n, r, step)
        elif kind == "wind":
            for m in range(len(net.wind_firms)):
                r = inj()[net.wind_node[m]] - arrays["q_wg"][m]
                arrays["q_wg"][m] = _wind(net, m, r, step)
        elif kind == "storage":
            for k, firm in enumerate(net.storage_firms):
                r = inj()[net.storage_node[k]] - arrays["q_s"][k]
                d, c = _storage(net, k, r, step)
                arrays["q_dis"][k], arrays["q_ch"][k] = d, c
                arrays["q_s"][k] = firm.eff_dis * d - c / firm.eff_ch
        else:
            for l in range(len(net.lines)):
                total = inj()
                f = arrays["q_tr"][l]
                r_i = total[net.line_from[l]] - f
                r_j = total[net.line_to[l]] + f
                arrays["q_tr"][l] = _line(net, l, r_i, r_j, step)


def brute_force_nash(network: Network, grid_step: float, config=None, max_rounds: int = 500,
                     slack: float = 1e-9) -> StrategyProfile:
    """Fixed point of exhaustive grid best responses.

    Raises :class:`CycleError` if the iteration revisits a profile, and
    ``RuntimeError`` if the fixed point admits a profitable grid deviation
    larger than ``slack`` (which would indicate a bug).
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    ordering = getattr(config, "ordering", ("classical", "wind", "storage", "transmission"))
    arrays = StrategyProfile.zeros(network).arrays()
    seen = set()
    for _ in range(max_rounds):
        key = b"".join(np.round(v / grid_step).astype(np.int64).tobytes() for v in arrays.values())
        if key in seen:
            raise CycleError("grid best responses cycle without a fixed point")
        seen.add(key)
        before = {k: v.copy() for k, v in arrays.items()}
        _round(network, arrays, grid_step, ordering)
        if all(np.array_equal(before[k], arrays[k]) for k in arrays):
            _verify(network, arrays, grid_step, slack)
            return StrategyProfile(**arrays)
    raise CycleError(f"no fixed point within {max_rounds} rounds")


def _verify(net, arrays, step, slack):
    base = StrategyProfile(**arrays)
    for kind in ("classical", "wind", "storage", "transmission"):
        trial = {k: v.copy() for k, v in arrays.items()}
        _round(net, trial, step, (kind,))
        probe = StrategyProfile(**trial)
        if probe.distance(base) == 0:
            continue
        for firm in _roster(net, kind):
            gain = firm_payoff(firm, _swap(net, arrays, trial, firm, kind), net) - firm_payoff(firm, base, net)
            if gain > slack:
                raise RuntimeError(f"{firm.name} gains {gain:.3e} by a grid deviation")


def _roster(net, kind):
    return {"classical": net.generators, "wind": net.wind_firms,
            "storage": net.storage_firms, "transmission": net.lines}[kind]


def _swap(net, arrays, trial, firm, kind):
    """Profile where only ``firm`` plays its row from ``trial``."""
    out = {k: v.copy() for k, v in arrays.items()}
    k = _roster(net, kind).index(firm)
    keys = {"classical": ("q_cg",), "wind": ("q_wg",), "storage": ("q_dis", "q_ch", "q_s"),
            "transmission": ("q_tr",)}[kind]
    for key in keys:
        out[key][k] = trial[key][k]
    return StrategyProfile(**out)
