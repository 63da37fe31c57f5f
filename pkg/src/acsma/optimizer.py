"""Entropy-regularised network utility maximisation.

Problem MP::

    maximise    sum_s U(x_s) + (1/beta) H(tau)
    subject to  sum_{s: l in s} x_s <= sum_{i: l in i} tau_i   for every link l
                tau a probability vector over independent sets

Dualising the link constraints with prices ``r >= 0`` and maximising over
``tau`` gives the log-partition function, so the dual is::

    D(r) = sum_s sup_x [U(x) - x sum_{l in s} r_l] + g_beta(r)

which is convex and smooth. It is minimised with a projected Newton method
(bound constraints ``r >= 0``) using the exact Hessian
``beta Cov(r) + sum_s (-1/U''(x_s)) e_s e_s^T``.

Problem EP adds, for each wired link ``w`` of capacity ``C``, the penalty
``P(z) = integral_0^z (y - C)^+ / y dy`` on its aggregate arrival ``z``.
Writing ``P`` through its conjugate introduces a wired dual ``p in [0, 1)``
with dual term ``-C ln(1 - p)``; at the optimum ``p = (z - C)^+ / z``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq, linprog
from scipy.special import logsumexp

from .csma import ScheduleDistribution, entropy, stationary_distribution
from .graph import IndependentSetFamily
from .scenario import Scenario

# -- utilities ---------------------------------------------------------------


@dataclass(frozen=True)
class UtilityFunction:
    """Strictly concave, increasing utility of a flow rate.

    Use :func:`alpha2`, :func:`alpha_fair` or :func:`custom_utility` rather
    than the constructor.

    Attributes
    ----------
    kind : {"alpha2", "alpha_fair", "custom"}
    alpha : float
        Fairness exponent (``2`` for ``alpha2``, ``nan`` for custom).
    weight : float
        Multiplicative weight.
    """

    kind: str
    alpha: float
    weight: float = 1.0
    _value: Callable | None = field(default=None, repr=False, compare=False)
    _marginal: Callable | None = field(default=None, repr=False, compare=False)
    _curvature: Callable | None = field(default=None, repr=False, compare=False)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0) or np.any(np.isnan(x)):
            raise ValueError(f"{self.kind} utility is defined for positive rates only")
        return x

    def value(self, x):
        x = self._check(x)
        a, w = self.alpha, self.weight
        if self.kind == "custom":
            out = w * np.asarray(self._value(x), dtype=float)
        elif a == 1.0:
            out = w * np.log(x)
        else:
            out = w * x ** (1.0 - a) / (1.0 - a)
        return float(out) if out.ndim == 0 else out

    def marginal(self, x):
        """``U'(x)``."""
        x = self._check(x)
        if self.kind == "custom":
            out = self.weight * np.asarray(self._marginal(x), dtype=float)
        else:
            out = self.weight * x ** (-self.alpha)
        return float(out) if out.ndim == 0 else out

    def curvature(self, x):
        """``U''(x)`` (negative)."""
        x = self._check(x)
        if self.kind == "custom":
            if self._curvature is not None:
                out = self.weight * np.asarray(self._curvature(x), dtype=float)
            else:
                h = 1e-6 * np.maximum(x, 1e-6)
                out = (self.marginal(x + h) - self.marginal(x - h)) / (2 * h)
        else:
            out = -self.alpha * self.weight * x ** (-self.alpha - 1.0)
        return float(out) if np.ndim(out) == 0 else np.asarray(out)

    def inverse_marginal(self, q):
        """Rate ``x`` with ``U'(x) = q`` for ``q > 0``."""
        q = np.asarray(q, dtype=float)
        if np.any(q <= 0):
            raise ValueError("price must be positive")
        if self.kind != "custom":
            out = (self.weight / q) ** (1.0 / self.alpha)
        else:
            out = np.array([self._invert_custom(v) for v in np.ravel(q)]).reshape(q.shape)
        return float(out) if out.ndim == 0 else out

    def _invert_custom(self, q):
        lo, hi = 1.0, 1.0
        while self.marginal(lo) < q:
            lo *= 0.5
            if lo < 1e-300:
                raise ValueError("marginal utility does not reach the requested price")
        while self.marginal(hi) > q:
            hi *= 2.0
            if hi > 1e300:
                raise ValueError("marginal utility does not fall to the requested price")
        return brentq(lambda x: self.marginal(x) - q, lo, hi, xtol=1e-15, rtol=1e-15)

    def scaled(self, c: float) -> "UtilityFunction":
        """The utility ``c U``."""
        if not c > 0:
            raise ValueError("scale must be positive")
        return UtilityFunction(self.kind, self.alpha, self.weight * c, self._value, self._marginal, self._curvature)


def alpha2(weight: float = 1.0) -> UtilityFunction:
    """``U(x) = -weight / x`` (alpha-fairness with alpha = 2)."""
    return alpha_fair(2.0, weight)


def alpha_fair(alpha: float, weight: float = 1.0) -> UtilityFunction:
    """``w x^(1-a)/(1-a)``, or ``w log x`` for ``a = 1``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not weight > 0:
        raise ValueError("weight must be positive")
    kind = "alpha2" if alpha == 2.0 else "alpha_fair"
    return UtilityFunction(kind, float(alpha), float(weight))


def custom_utility(value, marginal, curvature=None) -> UtilityFunction:
    """Utility given by callables for ``U``, ``U'`` and optionally ``U''``."""
    return UtilityFunction("custom", math.nan, 1.0, value, marginal, curvature)


def _conjugate(utility: UtilityFunction, q):
    """``sup_x [U(x) - x q]``, the maximiser and ``-dx/dq`` for ``q > 0``."""
    x = utility.inverse_marginal(q)
    val = utility.value(x) - x * q
    return np.asarray(val, float), np.asarray(x, float), -1.0 / np.asarray(utility.curvature(x), float)


def utility_gap(x_achieved, x_star, utility: UtilityFunction | None = None) -> float:
    """``sum_s U(x_s) - U(x*_s)``; nonpositive when ``x*`` is optimal."""
    utility = utility or alpha2()
    x_achieved = np.asarray(x_achieved, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if x_achieved.shape != x_star.shape:
        raise ValueError("rate vectors differ in length")
    return float(np.sum(utility.value(x_achieved)) - np.sum(utility.value(x_star)))


# -- capacity region ---------------------------------------------------------


@dataclass(frozen=True)
class CapacityVerdict:
    """Result of :func:`capacity_membership`.

    Attributes
    ----------
    verdict : {"inside", "boundary", "outside"}
    gauge : float
        Largest ``lam`` with ``lam * y`` in the capacity region (``inf`` for
        ``y = 0``). ``inside`` means ``gauge > 1``, ``boundary`` means
        ``gauge == 1`` up to the tolerance.
    tau : ndarray or None
        Schedule distribution serving ``y`` (certificate of membership).
    weights : ndarray or None
        For ``outside``: nonnegative link weights ``w`` with ``w . y`` larger
        than ``w`` summed over any independent set (separating hyperplane).
    """

    verdict: str
    gauge: float
    tau: np.ndarray | None
    weights: np.ndarray | None
    family: IndependentSetFamily

    @property
    def member(self) -> bool:
        return self.verdict != "outside"

    def served(self) -> np.ndarray | None:
        return None if self.tau is None else self.family.membership.T @ self.tau


def capacity_membership(family: IndependentSetFamily, y, tol: float = 1e-9) -> CapacityVerdict:
    """Decide whether link rates ``y`` lie in the capacity region."""
    y = np.asarray(y, dtype=float)
    if y.shape != (family.link_count,):
        raise ValueError(f"expected {family.link_count} link rates")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("link rates must be finite and nonnegative")
    A = family.membership
    n = len(family)
    if not np.any(y > 0):
        tau = np.zeros(n)
        tau[0] = 1.0
        return CapacityVerdict("inside", math.inf, tau, None, family)

    # maximise lam subject to A^T tau >= lam y, sum tau = 1, tau >= 0; y is
    # scaled to unit max norm so lam <= 1 and the LP stays well conditioned
    scale = float(y.max())
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-A.T, (y / scale)[:, None]])
    A_eq = np.zeros((1, n + 1))
    A_eq[0, :n] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(family.link_count), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (n + 1), method="highs")
    if not res.success:  # pragma: no cover - the LP is always feasible and bounded
        raise RuntimeError(f"capacity LP failed: {res.message}")
    gauge = float(res.x[-1]) / scale
    if gauge > 1.0 + tol:
        verdict = "inside"
    elif gauge >= 1.0 - tol:
        verdict = "boundary"
    else:
        verdict = "outside"
    tau = weights = None
    if verdict != "outside":
        tau = np.clip(res.x[:n], 0.0, None)
        tau /= tau.sum()
    else:
        # maximise w.y - t subject to w.a_i <= t, sum w = 1, w >= 0
        c2 = np.concatenate([-y / scale, [1.0]])
        A_ub2 = np.hstack([A, -np.ones((n, 1))])
        A_eq2 = np.concatenate([np.ones(family.link_count), [0.0]])[None, :]
        res2 = linprog(c2, A_ub=A_ub2, b_ub=np.zeros(n), A_eq=A_eq2, b_eq=[1.0],
                       bounds=[(0, None)] * family.link_count + [(None, None)], method="highs")
        weights = np.clip(res2.x[:-1], 0.0, None)
    return CapacityVerdict(verdict, gauge, tau, weights, family)


# -- dual function -----------------------------------------------------------


def wired_penalty(z, capacity):
    """``integral_0^z (y - C)^+ / y dy = (z - C) - C ln(z / C)`` for ``z > C``."""
    z = np.asarray(z, dtype=float)
    C = np.asarray(capacity, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(z > C, (z - C) - C * np.log(np.where(z > C, z, 1.0) / C), 0.0)
    return float(out) if out.ndim == 0 else out


def dual_objective(scenario: Scenario, x, r, beta: float | None = None,
                   utility: UtilityFunction | None = None, p_w=None) -> float:
    """Partial Lagrangian ``L2(x, r)`` of the entropy-regularised problem.

    ``sum_s U(x_s) - sum_l r_l load_l(x) + g_beta(r)``. Wired links contribute
    ``-P(z_w)`` when ``p_w`` is omitted, or the conjugate form
    ``-p_w z_w - C_w ln(1 - p_w)`` when it is given. ``U(0) = -inf`` for
    alpha-fairness with ``alpha >= 1``.
    """
    beta = scenario.params.beta if beta is None else beta
    utility = utility or alpha2()
    family = scenario.family()
    R, W = scenario.routing()
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(x < 0) or np.any(r < 0):
        raise ValueError("x and r must be nonnegative")
    if np.any(x == 0):
        if utility.kind != "custom" and utility.alpha >= 1.0:
            return -math.inf
        raise ValueError("utility is only evaluated at positive rates")
    g = float(logsumexp(beta * (family.membership @ r))) / beta
    total = float(np.sum(utility.value(x))) if len(x) else 0.0
    total += g - float(r @ (R.T @ x))
    if W.shape[1]:
        C = np.asarray(scenario.wired_capacity, dtype=float)
        z = W.T @ x
        if p_w is None:
            total -= float(np.sum(wired_penalty(z, C)))
        else:
            p_w = np.asarray(p_w, dtype=float)
            if np.any(p_w < 0) or np.any(p_w >= 1):
                raise ValueError("wired prices must lie in [0, 1)")
            total += float(-(p_w @ z) - np.sum(C * np.log1p(-p_w)))
    return total


# -- solution ----------------------------------------------------------------


@dataclass
class NumSolution:
    """Optimum of MP or EP together with its certificate.

    ``objective`` is the primal value ``sum U + H(tau)/beta - sum P``;
    ``dual_value`` is the dual function at ``(r_star, p_w_star)``.
    """

    x_star: np.ndarray
    tau_star: ScheduleDistribution
    r_star: np.ndarray
    p_w_star: np.ndarray
    objective: float
    dual_value: float
    kkt_residual: float
    converged: bool
    iterations: int
    beta: float
    problem: str
    flow_names: tuple = ()
    link_names: tuple = ()
    wired_names: tuple = ()
    residual_parts: dict = field(default_factory=dict)

    @property
    def y_star(self) -> np.ndarray:
        return self.tau_star.family.membership.T @ self.tau_star.tau

    def report(self) -> str:
        lines = [
            f"problem      {self.problem} (beta={self.beta:g})",
            f"status       {'converged' if self.converged else 'NOT CONVERGED'} after {self.iterations} iterations",
            f"objective    {self.objective:.10g}",
            f"dual value   {self.dual_value:.10g}",
            f"KKT residual {self.kkt_residual:.3e}",
            "",
            "flow        x*",
        ]
        lines += [f"{f:<10}  {x:.8f}" for f, x in zip(self.flow_names, self.x_star)]
        lines += ["", "link        r*            y*"]
        lines += [f"{l:<10}  {r:<12.6f}  {y:.8f}" for l, r, y in zip(self.link_names, self.r_star, self.y_star)]
        if len(self.wired_names):
            lines += ["", "wired       p*"]
            lines += [f"{w:<10}  {p:.8f}" for w, p in zip(self.wired_names, self.p_w_star)]
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "name", "value"])
            for f, x in zip(self.flow_names, self.x_star):
                w.writerow(["x", f, repr(float(x))])
            for l, r in zip(self.link_names, self.r_star):
                w.writerow(["r", l, repr(float(r))])
            for n, p in zip(self.wired_names, self.p_w_star):
                w.writerow(["p_w", n, repr(float(p))])
            w.writerow(["objective", "", repr(self.objective)])
            w.writerow(["kkt_residual", "", repr(self.kkt_residual)])


# -- solver ------------------------------------------------------------------


class _Dual:
    """Dual function of MP/EP over ``v = (r, p_w)``."""

    def __init__(self, scenario: Scenario, beta: float, utility: UtilityFunction, wired: bool):
        self.family = scenario.family()
        self.A = self.family.membership
        R, W = scenario.routing()
        if not wired:
            W = W[:, :0]
        self.R, self.W = R, W
        self.C = np.asarray(scenario.wired_capacity, dtype=float)[: W.shape[1]]
        self.M = np.hstack([R, W])  # flow -> priced resources
        self.L = R.shape[1]
        self.beta = beta
        self.utility = utility
        # flows that use at least one priced resource
        self.priced = self.M.sum(axis=1) > 0

    def evaluate(self, v, order=2):
        """Return ``D(v)`` and optionally gradient/Hessian; ``inf`` off-domain."""
        r, p = v[: self.L], v[self.L:]
        if np.any(p >= 1.0):
            return math.inf, None, None
        q = self.M @ v
        if np.any(q <= 0):
            return math.inf, None, None
        conj, x, dxdq = _conjugate(self.utility, q)
        e = self.beta * (self.A @ r)
        lse = float(logsumexp(e))
        tau = np.exp(e - lse)
        y = self.A.T @ tau
        val = float(conj.sum()) + lse / self.beta - float(np.sum(self.C * np.log1p(-p)))
        if not math.isfinite(val):
            return math.inf, None, None
        if order == 0:
            return val, None, None
        grad = -(self.M.T @ x)
        grad[: self.L] += y
        grad[self.L:] += self.C / (1.0 - p)
        H = self.M.T @ (dxdq[:, None] * self.M)
        H[: self.L, : self.L] += self.beta * (self.A.T @ (tau[:, None] * self.A) - np.outer(y, y))
        idx = np.arange(self.L, len(v))
        H[idx, idx] += self.C / (1.0 - p) ** 2
        return val, grad, H

    def primal(self, v):
        r, p = v[: self.L], v[self.L:]
        q = self.M @ v
        x = np.asarray(self.utility.inverse_marginal(q), float) if len(q) else np.zeros(0)
        dist = stationary_distribution(self.family, r, self.beta)
        return x, dist

    def residuals(self, v):
        r, p = v[: self.L], v[self.L:]
        x, dist = self.primal(v)
        y = self.A.T @ dist.tau
        load = self.R.T @ x
        gap = y - load
        q = self.M @ v
        parts = {
            "primal": float(np.max(np.maximum(-gap, 0.0), initial=0.0)),
            "slackness": float(np.max(np.abs(r * gap), initial=0.0)),
            "stationarity": float(np.max(np.abs(self.utility.marginal(x) - q) / np.maximum(1.0, q), initial=0.0))
            if len(x) else 0.0,
            "dual": float(np.max(np.maximum(-r, 0.0), initial=0.0)),
        }
        if len(self.C):
            z = self.W.T @ x
            target = np.maximum(z - self.C, 0.0) / np.where(z > 0, z, 1.0)
            parts["wired_price"] = float(np.max(np.abs(p - target)))
        return parts


def _initial_point(dual: _Dual) -> np.ndarray:
    F = dual.M.shape[0]
    v = np.zeros(dual.M.shape[1])
    if F == 0:
        return v
    crowd = max(1.0, float(dual.R.sum(axis=0).max(initial=0.0)))
    q0 = float(dual.utility.marginal(0.5 / crowd))
    for s in range(F):
        res = np.flatnonzero(dual.R[s])
        if len(res):
            v[res] = np.maximum(v[res], q0 / len(res))
        else:
            wres = np.flatnonzero(dual.W[s]) + dual.L
            v[wres] = np.maximum(v[wres], 0.5)
    return v


def _projected_newton(dual: _Dual, v, tol, max_iter):
    """Bertsekas' projected Newton method for ``min D(v)`` over ``v >= 0``."""
    upper = np.full(len(v), math.inf)
    upper[dual.L:] = 1.0
    val, grad, H = dual.evaluate(v)
    if not math.isfinite(val):
        raise RuntimeError("infeasible starting point for the dual solver")
    it = 0
    for it in range(1, max_iter + 1):
        pg = v - np.clip(v - grad, 0.0, upper)
        if np.max(np.abs(pg), initial=0.0) <= tol:
            break
        eps = min(1e-6, float(np.linalg.norm(pg)))
        active = (v <= eps) & (grad > 0)
        free = ~active
        d = np.zeros_like(v)
        if np.any(active):
            d[active] = -grad[active] / np.maximum(np.diag(H)[active], 1e-12)
        if np.any(free):
            Hf = H[np.ix_(free, free)]
            scale = max(1.0, float(np.max(np.abs(np.diag(Hf)))))
            mu = 1e-14 * scale
            while True:
                try:
                    c = np.linalg.cholesky(Hf + mu * np.eye(len(Hf)))
                    break
                except np.linalg.LinAlgError:
                    mu *= 100.0
            d[free] = -np.linalg.solve(c.T, np.linalg.solve(c, grad[free]))
        step, accepted = 1.0, False
        for _ in range(80):
            cand = np.maximum(v + step * d, 0.0)
            cval = dual.evaluate(cand, order=0)[0]
            decrease = float(grad[free] @ (v - cand)[free]) + float(grad[active] @ (v - cand)[active])
            if math.isfinite(cval) and val - cval >= 1e-4 * decrease - 1e-15 * abs(val):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        if np.array_equal(cand, v):
            break
        v = cand
        val, grad, H = dual.evaluate(v)
    return v, it


def _solve(scenario: Scenario, beta, utility, tol, max_iter, wired: bool, problem: str) -> NumSolution:
    beta = scenario.params.beta if beta is None else float(beta)
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    utility = utility or alpha2()
    dual = _Dual(scenario, beta, utility, wired)
    F = scenario.flow_count
    if np.any(~dual.priced):
        raise ValueError("every flow must traverse at least one link")
    v0 = _initial_point(dual)
    v, iterations = _projected_newton(dual, v0, tol=min(1e-12, tol), max_iter=max_iter)
    # a final polish with tighter stopping if the residual is not yet small
    parts = dual.residuals(v)
    if max(parts.values(), default=0.0) > tol and iterations < max_iter:
        v, extra = _projected_newton(dual, v, tol=0.0, max_iter=max_iter - iterations)
        iterations += extra
        parts = dual.residuals(v)
    residual = max(parts.values(), default=0.0)
    x, dist = dual.primal(v)
    r, p = v[: dual.L], v[dual.L:]
    objective = (float(np.sum(utility.value(x))) if F else 0.0) + entropy(dist.tau) / beta
    if len(dual.C):
        objective -= float(np.sum(wired_penalty(dual.W.T @ x, dual.C)))
    return NumSolution(
        x_star=x, tau_star=dist, r_star=r.copy(), p_w_star=p.copy(), objective=objective,
        dual_value=dual.evaluate(v, order=0)[0], kkt_residual=residual, converged=residual <= tol,
        iterations=iterations, beta=beta, problem=problem,
        flow_names=tuple(f.name for f in scenario.flows), link_names=scenario.graph.names,
        wired_names=tuple(scenario.wired_names) if wired else (), residual_parts=parts,
    )


def solve_mp(scenario: Scenario, beta: float | None = None, utility: UtilityFunction | None = None,
             tol: float = 1e-6, max_iter: int = 500) -> NumSolution:
    """Solve MP on a wireless-only scenario.

    Returns the best point found; ``converged`` is False when the KKT
    residual is still above ``tol`` after ``max_iter`` Newton iterations.
    """
    if scenario.has_wired:
        raise ValueError("solve_mp needs a wireless-only scenario; use solve_ep for wired links")
    return _solve(scenario, beta, utility, tol, max_iter, wired=False, problem="MP")


def solve_ep(scenario: Scenario, beta: float | None = None, utility: UtilityFunction | None = None,
             tol: float = 1e-6, max_iter: int = 500) -> NumSolution:
    """Solve EP: MP plus the drop-tail penalty on every wired link."""
    return _solve(scenario, beta, utility, tol, max_iter, wired=True, problem="EP")
