"""Independent reference computations used by the tests.

Nothing here imports the numerical code under test: independent sets come
from brute force over all subsets, schedule probabilities from direct
summation, and optima from grid search.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import brentq, linprog, minimize


def brute_force_independent_sets(n, edges):
    """All subsets of ``range(n)`` containing no edge, as frozensets."""
    edges = [tuple(e) for e in edges]
    out = []
    for k in range(n + 1):
        for combo in itertools.combinations(range(n), k):
            s = set(combo)
            if not any(u in s and v in s for u, v in edges):
                out.append(frozenset(combo))
    return out


def product_form(n, edges, r, beta):
    """``{set: probability}`` by direct summation (exponents shifted)."""
    sets = brute_force_independent_sets(n, edges)
    expo = [beta * sum(r[l] for l in s) for s in sets]
    top = max(expo)
    w = [math.exp(e - top) for e in expo]
    z = sum(w)
    return {s: wi / z for s, wi in zip(sets, w)}


def link_rates(n, edges, r, beta):
    probs = product_form(n, edges, r, beta)
    return np.array([sum(p for s, p in probs.items() if l in s) for l in range(n)])


def single_link_optimum(beta, weight=1.0):
    """One flow on one link with ``U = -w/x``.

    KKT: ``r = w / x^2`` and ``x = y(r) = 1 / (1 + exp(-beta r))``, solved by
    bisection on ``x``.
    """
    def f(x):
        return x - 1.0 / (1.0 + math.exp(-beta * weight / x**2))
    return brentq(f, 1e-6, 1.0, xtol=1e-15)


def max_entropy(sets_matrix, load, beta):
    """``max H(tau)/beta`` subject to served rates ``>= load``.

    Feasibility is settled by an LP; the value then comes from the dual
    ``min_{r >= 0} (1/beta) log sum exp(beta A r) - r.load`` (L-BFGS-B).
    Returns ``-inf`` for infeasible loads.
    """
    A = np.asarray(sets_matrix, float)
    load = np.asarray(load, float)
    n = A.shape[0]
    lp = linprog(np.zeros(n), A_ub=-A.T, b_ub=-load, A_eq=np.ones((1, n)), b_eq=[1.0],
                 bounds=[(0, None)] * n, method="highs")
    if lp.status != 0:
        return -math.inf

    def fun(r):
        e = beta * (A @ r)
        top = e.max()
        w = np.exp(e - top)
        z = w.sum()
        val = (top + math.log(z)) / beta - r @ load
        grad = A.T @ (w / z) - load
        return val, grad

    best = minimize(fun, np.zeros(A.shape[1]), jac=True, method="L-BFGS-B",
                    bounds=[(0, None)] * A.shape[1], options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 5000})
    return best.fun


def grid_num(n_links, edges, routes, beta, utility=lambda x: -1.0 / x, levels=12, points=9):
    """Maximise ``sum U(x_s) + H(tau)/beta`` by zooming grid search over x.

    The objective is concave, so refining a grid around the incumbent
    converges to the maximiser. Returns the best ``x`` found.
    """
    sets = brute_force_independent_sets(n_links, edges)
    A = np.array([[1.0 if l in s else 0.0 for l in range(n_links)] for s in sets])
    R = np.zeros((len(routes), n_links))
    for s, route in enumerate(routes):
        R[s, list(route)] = 1.0
    F = len(routes)

    def objective(x):
        if np.any(x <= 0):
            return -math.inf
        h = max_entropy(A, R.T @ x, beta)
        if not math.isfinite(h):
            return -math.inf
        return float(sum(utility(v) for v in x)) + h

    centre = np.full(F, 0.5)
    half = 0.5
    best_x, best_val = centre, objective(centre)
    for _ in range(levels):
        axes = [np.linspace(c - half, c + half, points) for c in centre]
        for pt in itertools.product(*axes):
            x = np.array(pt)
            if np.any(x <= 0) or np.any(x > 1):
                continue
            val = objective(x)
            if val > best_val:
                best_x, best_val = x, val
        centre = best_x
        half *= 2.5 / (points - 1)
    return best_x
