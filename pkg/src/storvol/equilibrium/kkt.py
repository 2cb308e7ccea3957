"""Multiplier recovery and the stacked KKT residual of all firms.

Stationarity residuals are reported per unit of scenario probability, i.e.
in $/MWh, matching the way each firm's conditions are normally written.
A condition ``d <= 0  perp  q >= 0`` contributes its natural residual
``|min(-d, q)|``; every constraint/multiplier pair contributes ``|g * mu|``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from ..market import MultiplierSet, Network, StrategyProfile, nodal_prices

ACTIVE_TOL = 1e-7
ROUNDOFF = 1e-13


@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def residual(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


def _nnls(M, rhs):
    if M.shape[1] == 0:
        return np.zeros(0)
    return nnls(M, rhs, maxiter=50 * M.shape[1])[0]


def _classical_multipliers(q, b, gen, tol):
    """Solve for (mu_max, mu_up, mu_dn) of one generator in one scenario."""
    T = q.size
    cols, tags = [], []
    for t in range(T):
        if gen.capacity - q[t] <= tol:
            col = np.zeros(T)
            col[t] = -1.0
            cols.append(col)
            tags.append(("max", t))
        if q[t] <= tol:
            col = np.zeros(T)
            col[t] = 1.0
            cols.append(col)
            tags.append(("nu", t))
        if t >= 1:
            step = q[t] - q[t - 1]
            if gen.ramp_up - step <= tol:
                col = np.zeros(T)
                col[t], col[t - 1] = -1.0, 1.0
                cols.append(col)
                tags.append(("up", t))
            if gen.ramp_down + step <= tol:
                col = np.zeros(T)
                col[t], col[t - 1] = 1.0, -1.0
                cols.append(col)
                tags.append(("dn", t))
    out = {"max": np.zeros(T), "up": np.zeros(T), "dn": np.zeros(T), "nu": np.zeros(T)}
    if cols:
        z = _nnls(np.column_stack(cols), -b)
        for (kind, t), val in zip(tags, z):
            out[kind][t] = val
    return out["max"], out["up"], out["dn"]


def _storage_multipliers(dis, ch, mu_s, psi, firm, delta, tol):
    T = dis.size
    Q = firm.capacity
    soc = np.cumsum(ch - dis) * delta
    b = np.concatenate([-firm.eff_dis * mu_s - psi * firm.op_cost, mu_s / firm.eff_ch - psi * firm.op_cost])
    cols, tags = [], []

    def unit(row, sign=1.0):
        col = np.zeros(2 * T)
        col[row] = sign
        return col

    for t in range(T):
        if firm.rate_dis * Q - dis[t] <= tol:
            cols.append(unit(t, -1.0))
            tags.append(("dis_max", t))
        if firm.rate_ch * Q - ch[t] <= tol:
            cols.append(unit(T + t, -1.0))
            tags.append(("ch_max", t))
        if dis[t] <= tol:
            cols.append(unit(t))
            tags.append(("nu", t))
        if ch[t] <= tol:
            cols.append(unit(T + t))
            tags.append(("nu", T + t))
    for k in range(T):
        upto = np.zeros(2 * T)
        upto[:k + 1] = delta
        upto[T:T + k + 1] = -delta
        if soc[k] <= tol:
            cols.append(-upto)
            tags.append(("soc_min", k))
        if Q - soc[k] <= tol:
            cols.append(upto)
            tags.append(("soc_max", k))
    out = {key: np.zeros(T) for key in ("dis_max", "ch_max", "soc_min", "soc_max")}
    if cols:
        z = _nnls(np.column_stack(cols), -b)
        for (kind, t), val in zip(tags, z):
            if kind != "nu":
                out[kind][t] = val
    return out


def recover_multipliers(network: Network, profile: StrategyProfile, tol: float = ACTIVE_TOL) -> MultiplierSet:
    """Multipliers that best satisfy each firm's stationarity at ``profile``.

    Free multipliers come straight from their equality conditions; the rest
    are fitted by nonnegative least squares over the active constraints.
    """
    psi = network.scenarios.probabilities
    alpha, beta = network.demand.alpha, network.demand.beta
    P = nodal_prices(profile, network)
    _, T, W = network.shape
    mu = {k: np.zeros(np.shape(v)) for k, v in MultiplierSet.zeros(network).__dict__.items()}

    for m, firm in enumerate(network.wind_firms):
        i = network.wind_node[m]
        q = profile.q_wg[m]
        marginal = P[i] * (1.0 - beta[i][:, None] * q)
        at_cap = firm.availability - q <= tol
        mu["wg_max"][m] = np.where(at_cap, psi * np.maximum(marginal, 0.0), 0.0)

    for n, gen in enumerate(network.generators):
        i = network.gen_node[n]
        q = profile.q_cg[n]
        b_all = psi * (P[i] * (1.0 - beta[i][:, None] * q) - gen.marginal_cost)
        for w in range(W):
            mx, up, dn = _classical_multipliers(q[:, w], b_all[:, w], gen, tol)
            mu["cg_max"][n, :, w], mu["cg_up"][n, :, w], mu["cg_dn"][n, :, w] = mx, up, dn

    delta = network.horizon.delta
    for k, firm in enumerate(network.storage_firms):
        i = network.storage_node[k]
        qs = profile.q_s[k]
        mu_s = -psi * P[i] * (1.0 - (1 - firm.regulated) * beta[i][:, None] * qs)
        mu["s"][k] = mu_s
        for w in range(W):
            out = _storage_multipliers(profile.q_dis[k, :, w], profile.q_ch[k, :, w], mu_s[:, w],
                                       psi[w], firm, delta, tol)
            for key, val in out.items():
                mu[key][k, :, w] = val

    for l, line in enumerate(network.lines):
        i, j = network.line_from[l], network.line_to[l]
        f = profile.q_tr[l]
        keep = 1 - line.regulated
        mu_tr = -psi * P[j] * (1.0 + keep * beta[j][:, None] * f)
        e = psi * P[i] * (1.0 - keep * beta[i][:, None] * f) + mu_tr
        L = line.limit
        mu["tr"][l] = mu_tr
        mu["tr_max"][l] = np.where((L - f <= tol) & (e > 0), e, 0.0)
        mu["tr_min"][l] = np.where((f + L <= tol) & (e < 0), -e, 0.0)

    return MultiplierSet(**mu)


def _slack(g, scale):
    """Constraint slack with round-off sized values (relative to ``scale``) read as zero."""
    return np.where(np.abs(g) <= ROUNDOFF * (1.0 + np.abs(scale)), 0.0, g)


def _natural(d, q):
    return np.abs(np.minimum(-d, q))


def _mx(*arrays) -> float:
    vals = [float(np.max(a)) for a in arrays if np.size(a)]
    return max(vals) if vals else 0.0


def kkt_report(network: Network, profile: StrategyProfile, mu: MultiplierSet) -> KKTReport:
    psi = network.scenarios.probabilities
    beta = network.demand.beta
    P = nodal_prices(profile, network)
    delta = network.horizon.delta
    stat, prim, dual, comp = [], [], [], []

    for m, firm in enumerate(network.wind_firms):
        i = network.wind_node[m]
        q, u = profile.q_wg[m], mu.wg_max[m]
        d = P[i] * (1.0 - beta[i][:, None] * q) - u / psi
        stat.append(_natural(d, q))
        prim += [np.maximum(-q, 0), np.maximum(q - firm.availability, 0)]
        dual.append(np.maximum(-u, 0))
        comp.append(np.abs(u * _slack(firm.availability - q, firm.availability)))

    for n, gen in enumerate(network.generators):
        i = network.gen_node[n]
        q = profile.q_cg[n]
        mx, up, dn = mu.cg_max[n], mu.cg_up[n], mu.cg_dn[n]
        up_next = np.vstack([up[1:], np.zeros_like(up[:1])])
        dn_next = np.vstack([dn[1:], np.zeros_like(dn[:1])])
        d = (P[i] * (1.0 - beta[i][:, None] * q) - gen.marginal_cost
             + (-mx + up_next - up + dn - dn_next) / psi)
        stat.append(_natural(d, q))
        prim += [np.maximum(-q, 0), np.maximum(q - gen.capacity, 0)]
        comp.append(np.abs(mx * _slack(gen.capacity - q, gen.capacity)))
        dual += [np.maximum(-mx, 0), np.maximum(-up, 0), np.maximum(-dn, 0),
                 np.abs(up[:1]), np.abs(dn[:1])]
        if q.shape[0] > 1:
            step = np.diff(q, axis=0)
            slack_up = gen.ramp_up - step
            slack_dn = gen.ramp_down + step
            prim += [np.maximum(-slack_up, 0), np.maximum(-slack_dn, 0)]
            with np.errstate(invalid="ignore"):
                cu = np.where(up[1:] == 0, 0.0, np.abs(up[1:] * _slack(slack_up, gen.ramp_up)))
                cd = np.where(dn[1:] == 0, 0.0, np.abs(dn[1:] * _slack(slack_dn, gen.ramp_down)))
            comp += [cu, cd]

    for k, firm in enumerate(network.storage_firms):
        i = network.storage_node[k]
        dis, ch, qs = profile.q_dis[k], profile.q_ch[k], profile.q_s[k]
        ms = mu.s[k]
        Q = firm.capacity
        soc = np.cumsum(ch - dis, axis=0) * delta
        tail = np.cumsum((mu.soc_min[k] - mu.soc_max[k])[::-1], axis=0)[::-1] * delta
        stat.append(np.abs(P[i] * (1.0 - (1 - firm.regulated) * beta[i][:, None] * qs) + ms / psi))
        d_dis = (-firm.eff_dis * ms - mu.dis_max[k] - tail) / psi - firm.op_cost
        d_ch = (ms / firm.eff_ch - mu.ch_max[k] + tail) / psi - firm.op_cost
        stat += [_natural(d_dis, dis), _natural(d_ch, ch)]
        prim += [np.abs(qs - (firm.eff_dis * dis - ch / firm.eff_ch)),
                 np.maximum(-dis, 0), np.maximum(-ch, 0),
                 np.maximum(dis - firm.rate_dis * Q, 0), np.maximum(ch - firm.rate_ch * Q, 0),
                 np.maximum(-soc, 0), np.maximum(soc - Q, 0)]
        dual += [np.maximum(-getattr(mu, key)[k], 0) for key in ("dis_max", "ch_max", "soc_min", "soc_max")]
        comp += [np.abs(mu.dis_max[k] * _slack(firm.rate_dis * Q - dis, firm.rate_dis * Q)),
                 np.abs(mu.ch_max[k] * _slack(firm.rate_ch * Q - ch, firm.rate_ch * Q)),
                 np.abs(mu.soc_min[k] * _slack(soc, Q)), np.abs(mu.soc_max[k] * _slack(Q - soc, Q))]

    for l, line in enumerate(network.lines):
        i, j = network.line_from[l], network.line_to[l]
        f = profile.q_tr[l]
        keep = 1 - line.regulated
        L = line.limit
        stat.append(np.abs(P[j] * (1.0 + keep * beta[j][:, None] * f) + mu.tr[l] / psi))
        stat.append(np.abs(P[i] * (1.0 - keep * beta[i][:, None] * f)
                           + (mu.tr[l] + mu.tr_min[l] - mu.tr_max[l]) / psi))
        prim.append(np.maximum(np.abs(f) - L, 0))
        dual += [np.maximum(-mu.tr_min[l], 0), np.maximum(-mu.tr_max[l], 0)]
        comp += [np.abs(mu.tr_min[l] * _slack(f + L, L)), np.abs(mu.tr_max[l] * _slack(L - f, L))]

    return KKTReport(_mx(*stat), _mx(*prim), _mx(*dual), _mx(*comp))


def kkt_residual(network: Network, profile: StrategyProfile, multipliers: MultiplierSet) -> float:
    """Infinity norm of every firm's KKT violations at ``profile``."""
    return kkt_report(network, profile, multipliers).residual
