"""Best responses of the four firm types to a fixed residual injection.

``residual`` always means the injection at the firm's node from everybody
except the firm itself, laid out as ``(t, w)``.  Problems separate across
scenarios, so storage and ramp-limited generators are solved one scenario
at a time.
"""
from __future__ import annotations

import numpy as np
from scipy.special import lambertw

from ..market import ClassicalGenerator, Network, StorageFirm, TransmissionLine, WindFirm
from .ipm import maximize_concave

def _demand(network: Network, node: str):
    i = network.node_index[node]
    return network.demand.alpha[i][:, None], network.demand.beta[i][:, None]


def best_response_wind(firm: WindFirm, residual, network: Network) -> np.ndarray:
    """Revenue ``P q`` peaks at ``q = 1/beta`` whatever the residual is.

    ``residual`` is accepted for a uniform best-response signature and ignored.
    """
    _, beta = _demand(network, firm.node)
    return np.minimum(1.0 / beta, firm.availability)


def cournot_quantity(alpha, beta, residual, cost):
    """Root of ``alpha e^{-beta (r + q)} (1 - beta q) = cost`` on ``[0, 1/beta)``.

    With ``z = 1 - beta q`` the condition reads ``z e^z = e^{1 + K}`` where
    ``K = ln(cost / alpha) + beta r``, so ``z`` is the principal Lambert W
    value.  Returns zero where the choke price does not cover ``cost``.
    """
    alpha, beta, residual, cost = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                                        for v in (alpha, beta, residual, cost)))
    with np.errstate(divide="ignore"):
        K = np.log(cost) - np.log(alpha) + beta * residual
    q = np.zeros(K.shape)
    live = K < 0
    z = lambertw(np.exp(1.0 + K[live])).real
    q[live] = (1.0 - z) / beta[live]
    return q


def _ramp_ok(q, gen: ClassicalGenerator, tol=1e-11):
    if q.shape[0] < 2:
        return np.ones(q.shape[1], dtype=bool)
    d = np.diff(q, axis=0)
    return np.all(d <= gen.ramp_up + tol, axis=0) & np.all(-d <= gen.ramp_down + tol, axis=0)


def _classical_scenario(alpha, beta, residual, gen: ClassicalGenerator, x0, tol):
    """Ramp-coupled generator problem for one scenario, solved by interior point."""
    T = alpha.size
    rows, rhs = [np.eye(T), -np.eye(T)], [np.full(T, gen.capacity), np.zeros(T)]
    if T > 1:
        diff = np.diff(np.eye(T), axis=0)  # row t: q_{t+1} - q_t
        if np.isfinite(gen.ramp_up):
            rows.append(diff)
            rhs.append(np.full(T - 1, gen.ramp_up))
        if np.isfinite(gen.ramp_down):
            rows.append(-diff)
            rhs.append(np.full(T - 1, gen.ramp_down))
    G, h = np.vstack(rows), np.concatenate(rhs)
    c = gen.marginal_cost

    def objective(q):
        P = alpha * np.exp(-beta * (residual + q))
        f = float(np.sum((P - c) * q))
        grad = P * (1.0 - beta * q) - c
        curv = np.minimum(-beta * P * (2.0 - beta * q), 0.0)
        return f, grad, np.diag(curv)

    cap = min(gen.capacity, float(np.max(1.0 / beta)))
    start = np.clip(x0, 0.0, cap)
    return maximize_concave(objective, G, h, start, tol=tol).x


def best_response_classical(gen: ClassicalGenerator, residual, network: Network,
                            tol: float = 1e-10, warm=None) -> np.ndarray:
    alpha, beta = _demand(network, gen.node)
    residual = np.asarray(residual, dtype=float)
    q = np.minimum(cournot_quantity(alpha, beta, residual, gen.marginal_cost), gen.capacity)
    bad = np.flatnonzero(~_ramp_ok(q, gen))
    for w in bad:
        x0 = q[:, w] if warm is None else warm[:, w]
        q[:, w] = _classical_scenario(alpha[:, 0], beta[:, 0], residual[:, w], gen, x0, tol)
    return np.clip(q, 0.0, gen.capacity)


def _storage_constraints(firm: StorageFirm, T: int, delta: float):
    eye, zero = np.eye(T), np.zeros((T, T))
    cum = np.tril(np.ones((T, T))) * delta  # SOC_t = cum @ (ch - dis)
    Q = firm.capacity
    G = np.vstack([
        np.hstack([-eye, zero]), np.hstack([zero, -eye]),
        np.hstack([eye, zero]), np.hstack([zero, eye]),
        np.hstack([cum, -cum]),   # -SOC <= 0
        np.hstack([-cum, cum]),   # SOC <= Q
    ])
    h = np.concatenate([np.zeros(2 * T), np.full(T, firm.rate_dis * Q), np.full(T, firm.rate_ch * Q),
                        np.zeros(T), np.full(T, Q)])
    return G, h


def _storage_scenario(alpha, beta, residual, firm: StorageFirm, delta, x0, tol):
    T = alpha.size
    G, h = _storage_constraints(firm, T, delta)
    ed, ec, c, gam = firm.eff_dis, firm.eff_ch, firm.op_cost, firm.regulated
    v = np.array([ed, -1.0 / ec])

    def objective(y):
        dis, ch = y[:T], y[T:]
        x = ed * dis - ch / ec
        P = alpha * np.exp(-beta * (residual + x))
        f = float(np.sum((1 - gam) * P * x - gam * P / beta - c * (dis + ch)))
        fx = P * (1.0 - (1 - gam) * beta * x)
        fxx = np.minimum(-beta * P * ((1 - gam) * (2.0 - beta * x) + gam), 0.0)
        grad = np.concatenate([ed * fx - c, -fx / ec - c])
        H = np.zeros((2 * T, 2 * T))
        idx = np.arange(T)
        for a in range(2):
            for b in range(2):
                H[a * T + idx, b * T + idx] = fxx * v[a] * v[b]
        return f, grad, H

    return maximize_concave(objective, G, h, x0, tol=tol).x


def _soc_feasible(dis, ch, firm, delta, tol=1e-9):
    soc = np.cumsum(ch - dis, axis=0) * delta
    return bool(np.all(soc >= -tol) and np.all(soc <= firm.capacity + tol))


def tidy_storage(dis, ch, firm: StorageFirm, delta: float):
    """Apply the one-sided substitution wherever it keeps the SOC path feasible."""
    dis, ch = np.array(dis, dtype=float), np.array(ch, dtype=float)
    both = (dis > 0) & (ch > 0)
    if not np.any(both):
        return dis, ch
    loss = firm.eff_dis * firm.eff_ch
    net = firm.eff_dis * dis - ch / firm.eff_ch
    new_dis = np.where(both & (net > 0), dis - ch / loss, np.where(both, 0.0, dis))
    new_ch = np.where(both & (net < 0), ch - dis * loss, np.where(both, 0.0, ch))
    new_dis, new_ch = np.maximum(new_dis, 0.0), np.maximum(new_ch, 0.0)
    for w in range(dis.shape[1]):
        if _soc_feasible(new_dis[:, w], new_ch[:, w], firm, delta):
            dis[:, w], ch[:, w] = new_dis[:, w], new_ch[:, w]
    return dis, ch


def best_response_storage(firm: StorageFirm, residual, network: Network,
                          tol: float = 1e-10, warm=None):
    """Returns ``(q_dis, q_ch, q_s)``, each ``(t, w)``."""
    alpha, beta = _demand(network, firm.node)
    residual = np.asarray(residual, dtype=float)
    T, W = residual.shape
    dis, ch = np.zeros((T, W)), np.zeros((T, W))
    if firm.capacity > 0:
        delta = network.horizon.delta
        for w in range(W):
            if warm is not None:
                x0 = np.concatenate([warm[0][:, w], warm[1][:, w]])
            else:
                x0 = np.zeros(2 * T)
            y = _storage_scenario(alpha[:, 0], beta[:, 0], residual[:, w], firm, delta, x0, tol)
            dis[:, w] = np.clip(y[:T], 0.0, firm.rate_dis * firm.capacity)
            ch[:, w] = np.clip(y[T:], 0.0, firm.rate_ch * firm.capacity)
        dis, ch = tidy_storage(dis, ch, firm, delta)
    qs = firm.eff_dis * dis - ch / firm.eff_ch
    return dis, ch, qs


def _bracketed_newton(fun, lo, hi, x0, iters=100, xtol=1e-13):
    """Vectorized safeguarded Newton for strictly decreasing ``fun`` with a sign change on [lo, hi]."""
    x = np.clip(x0, lo, hi)
    lo, hi = lo.copy(), hi.copy()
    for _ in range(iters):
        f, df = fun(x)
        lo = np.where(f > 0, x, lo)
        hi = np.where(f < 0, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = x - f / df
        outside = ~((x_new > lo) & (x_new < hi)) | ~np.isfinite(x_new)
        x_new = np.where(outside, 0.5 * (lo + hi), x_new)
        x_new = np.where(f == 0, x, x_new)
        done = np.abs(x_new - x) <= xtol * (1.0 + np.abs(x))
        x = x_new
        if np.all(done):
            break
    return x


def best_response_transmission(line: TransmissionLine, residual_from, residual_to,
                               network: Network, warm=None) -> np.ndarray:
    """Flow into ``line.from_node`` per (t, w); the mirror is its negative."""
    a_i, b_i = _demand(network, line.from_node)
    a_j, b_j = _demand(network, line.to_node)
    r_i = np.asarray(residual_from, dtype=float)
    r_j = np.asarray(residual_to, dtype=float)
    shape = np.broadcast_shapes(r_i.shape, r_j.shape)
    cap = line.limit
    if cap <= 0:
        return np.zeros(shape)
    if line.regulated:
        f = (np.log(a_i) - np.log(a_j) - b_i * r_i + b_j * r_j) / (b_i + b_j)
    else:
        def marginal(f):
            Pi = a_i * np.exp(-b_i * (r_i + f))
            Pj = a_j * np.exp(-b_j * (r_j - f))
            val = Pi * (1.0 - b_i * f) - Pj * (1.0 + b_j * f)
            der = -b_i * Pi * (2.0 - b_i * f) - b_j * Pj * (2.0 + b_j * f)
            return val, der

        lo = np.broadcast_to(np.maximum(-1.0 / b_j, -cap), shape).astype(float)
        hi = np.broadcast_to(np.minimum(1.0 / b_i, cap), shape).astype(float)
        x0 = np.zeros(shape) if warm is None else np.asarray(warm, dtype=float)
        f = _bracketed_newton(marginal, lo, hi, x0)
        # root lies outside the tradable band: the nearer limit is optimal
        v_lo, _ = marginal(lo)
        v_hi, _ = marginal(hi)
        f = np.where(v_lo <= 0, lo, np.where(v_hi >= 0, hi, f))
    return np.clip(f, -cap, cap) + np.zeros(shape)
