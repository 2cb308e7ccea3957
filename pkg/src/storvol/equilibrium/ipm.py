"""Dense primal-dual interior point method for small concave programs.

Solves ``max f(x) s.t. G x <= h`` where ``f`` is smooth and concave on the
region of interest.  Problems here have at most a few hundred variables, so
the normal equations are formed and factored densely at every step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import nnls


# how far above ``tol`` a stalled run may finish and still count as solved
ACCEPT = 1e4
# relative residual below which an active-set polish is attempted
POLISH_FROM = 1e-5


class SubsolverError(RuntimeError):
    """A per-firm optimization failed to converge."""


@dataclass
class IPMResult:
    x: np.ndarray
    dual: np.ndarray
    slack: np.ndarray
    iterations: int
    converged: bool
    gap: float


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _active_guesses(s, lam):
    """Active sets to try: the plain split, then with unclear cases dropped or added."""
    active = s < lam
    yield active
    with np.errstate(divide="ignore"):
        ratio = s / lam
    unclear = (ratio > 1e-3) & (ratio < 1e3)
    if np.any(unclear):
        yield active & ~unclear
        yield active | unclear


def _polish(objective, G, h, x, active, dual_tol, primal_tol, iters=8):
    """Newton on the guessed active set, accepted only if it certifies optimality.

    Interior iterates of degenerate problems stall well short of machine
    accuracy; once the active set is evident, solving the equality-constrained
    system directly recovers the exact vertex/face.
    """
    GA, hA = G[active], h[active]
    n = x.size
    x = x.copy()
    nu = np.zeros(GA.shape[0])
    for _ in range(iters):
        _, g, H = objective(x)
        M = np.block([[H, -GA.T], [GA, np.zeros((GA.shape[0], GA.shape[0]))]])
        rhs = np.concatenate([-g, hA - GA @ x])
        sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
        dx, nu = sol[:n], sol[n:]
        x = x + dx
        if not np.all(np.isfinite(x)):
            return None
        if np.max(np.abs(dx)) <= 1e-12 * (1.0 + np.max(np.abs(x))):
            break
    else:
        return None
    if GA.shape[0]:
        # the bordered system is rank deficient; land exactly on the face using the active rows alone
        for _ in range(2):
            x = x + np.linalg.lstsq(GA, hA - GA @ x, rcond=None)[0]
    if np.max(G @ x - h, initial=-np.inf) > primal_tol:
        return None
    _, g, _ = objective(x)

    def certified(nu):
        lam = np.zeros(G.shape[0])
        lam[active] = nu
        ok = (np.max(np.abs(g - G.T @ lam)) <= dual_tol
              and np.max(np.abs(lam * (h - G @ x))) <= dual_tol)
        return lam if ok else None

    # redundant active rows make the multipliers non-unique; only search if the cheap guess is infeasible
    lam = certified(nu) if np.all(nu >= 0) else None
    if lam is None and GA.shape[0]:
        lam = certified(nnls(GA.T, g, maxiter=50 * GA.shape[0])[0])
    if lam is None:
        return None
    return x, lam


def maximize_concave(objective, G, h, x0, tol=1e-10, max_iter=200, raise_on_failure=True):
    """Mehrotra predictor-corrector on the slack form ``G x + s = h, s >= 0``.

    ``objective(x)`` returns ``(f, grad, hess)`` with ``hess`` the (negative
    semidefinite) Hessian of ``f``.  Positive curvature must already be clipped
    by the caller.
    """
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    m = G.shape[0]
    x = np.array(x0, dtype=float)
    s = np.maximum(h - G @ x, 1e-2 * (1.0 + np.abs(h)))
    _, g, H = objective(x)
    lam = np.full(m, max(1.0, float(np.max(np.abs(g)))) / np.sqrt(m))
    scale_d = 1.0 + float(np.max(np.abs(g)))
    scale_p = 1.0 + float(np.max(np.abs(h)))

    # a warm start usually sits on the optimal face already
    slack0 = h - G @ x
    if np.all(slack0 >= -1e-9 * scale_p):
        polished = _polish(objective, G, h, x, slack0 <= 1e-9 * scale_p, tol * scale_d, tol * scale_p)
        if polished is not None:
            xp, lp = polished
            return IPMResult(xp, lp, h - G @ xp, 0, True, 0.0)

    best, best_merit, stall = None, np.inf, 0
    polish_at = POLISH_FROM
    for it in range(1, max_iter + 1):
        _, g, H = objective(x)
        r_d = g - G.T @ lam
        r_p = G @ x + s - h
        mu = float(s @ lam) / m
        merit = max(np.max(np.abs(r_d)) / scale_d, np.max(np.abs(r_p)) / scale_p, 1e2 * mu / scale_d)
        if merit <= tol:
            return IPMResult(x, lam, s, it, True, mu)
        if merit <= polish_at:
            polish_at = 0.1 * merit
            for active in _active_guesses(s, lam):
                polished = _polish(objective, G, h, x, active, tol * scale_d, tol * scale_p)
                if polished is not None:
                    xp, lp = polished
                    return IPMResult(xp, lp, h - G @ xp, it, True, 0.0)
        if merit < 0.5 * best_merit:
            stall = 0
        else:
            stall += 1
        if merit < best_merit:
            best, best_merit = (x.copy(), lam.copy(), s.copy(), mu), merit
        # round-off limits degenerate problems; settle for a near-optimal point once progress stops
        if stall >= 8 and best_merit <= ACCEPT * tol:
            break

        D = lam / s
        K = -H + G.T @ (D[:, None] * G)
        try:
            factor = scipy.linalg.cho_factor(K, check_finite=False)

            def solve(rhs):
                return scipy.linalg.cho_solve(factor, rhs, check_finite=False)
        except np.linalg.LinAlgError:
            def solve(rhs):
                return np.linalg.lstsq(K, rhs, rcond=None)[0]

        def direction(rc):
            rhs = r_d - G.T @ (D * (rc / lam + r_p))
            dx = solve(rhs)
            for _ in range(2):
                dx = dx + solve(rhs - K @ dx)
            dlam = D * (G @ dx + rc / lam + r_p)
            ds = (rc - s * dlam) / lam
            return dx, ds, dlam

        dx_a, ds_a, dl_a = direction(-s * lam)
        a_aff = min(_max_step(s, ds_a), _max_step(lam, dl_a))
        mu_aff = float((s + a_aff * ds_a) @ (lam + a_aff * dl_a)) / m
        sigma = min(1.0, (mu_aff / mu) ** 3)
        # keep the barrier from collapsing before the stationarity error catches up
        if np.max(np.abs(r_d)) > 1e3 * tol * scale_d or np.max(np.abs(r_p)) > 1e3 * tol * scale_p:
            sigma = max(sigma, 0.1)
        dx, ds, dlam = direction(sigma * mu - s * lam - ds_a * dl_a)
        step = 0.995 * min(_max_step(s, ds), _max_step(lam, dlam))
        step = min(step, 1.0)
        # exponential objectives overflow far outside the feasible box
        for _ in range(30):
            f_new, g_new, _ = objective(x + step * dx)
            if np.isfinite(f_new) and np.all(np.isfinite(g_new)):
                break
            step *= 0.5
        x = x + step * dx
        s = s + step * ds
        lam = lam + step * dlam

    if best is not None and best_merit <= ACCEPT * tol:
        x, lam, s, mu = best
        return IPMResult(x, lam, s, it, True, mu)
    if raise_on_failure:
        raise SubsolverError(f"interior point method did not converge in {max_iter} iterations "
                             f"(relative residual {best_merit:.3e})")
    return IPMResult(x, lam, s, max_iter, False, mu)
