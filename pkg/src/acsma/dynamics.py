"""Fluid models of TCP Reno and multi-connection TCP Reno over adaptive CSMA.

The schedule distribution is recomputed exactly from the current TA vector
at every evaluation of the vector field (the CSMA chain is assumed to mix
instantly relative to rate and TA dynamics).

Modes
-----
proposed
    ``n_s = k T_s`` connections per flow, AQM price ``sum r_l``.
proposed_wired
    As ``proposed`` plus drop-tail loss on wired links.
appendixB
    Single-connection Reno on single-link flows whose RTT is closed by
    ``T_s = r_s / (alpha x_s)`` (queue proportional to TA).
reno_over_lcsma
    Single-connection Reno with every TA frozen at ``r_max`` and drop-tail
    loss at both wireless and wired links.

RTT closure for the proposed modes: ``T_s = propagation_delay + sum_{l in s}
r_l / alpha``. Any closure works for the equilibrium, since ``n_s = k T_s``
cancels the RTT, but this one keeps the compensation nontrivial.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .csma import stationary_distribution
from .optimizer import UtilityFunction, alpha2
from .scenario import Scenario

MODES = ("proposed", "proposed_wired", "appendixB", "reno_over_lcsma")
METHODS = ("euler", "rk4", "implicit")
DIVERGENCE_LIMIT = 1e9


class IntegrationDiverged(RuntimeError):
    """The state left the finite range; ``state`` is the last finite state."""

    def __init__(self, message, time, state):
        super().__init__(message)
        self.time = time
        self.state = state


# -- pointwise model equations ----------------------------------------------

def projection_plus(g, z):
    """``max(g, 0)`` where ``z <= 0``, ``g`` elsewhere."""
    g = np.asarray(g, dtype=float)
    out = np.where(np.asarray(z) <= 0, np.maximum(g, 0.0), g)
    return float(out) if out.ndim == 0 else out


def acsma_derivative(arrival, service, r, alpha, r_max=None):
    """TA drift ``alpha [a_l - d_l]^+_{r_l}``, held at ``r_max`` when saturated."""
    arrival, service, r = (np.asarray(v, dtype=float) for v in (arrival, service, r))
    if not (arrival.shape == service.shape == r.shape):
        raise ValueError("arrival, service and r must have the same length")
    dr = alpha * projection_plus(arrival - service, r)
    if r_max is not None:
        dr = np.where((r >= r_max) & (dr > 0), 0.0, dr)
    return dr


def reno_derivative(x, T, price):
    """Single-connection Reno: ``(x^2/2) (2/(T^2 x^2) - price)``."""
    return multiconn_derivative(x, 1.0, T, price)


def multiconn_derivative(x, n, T, price):
    """Aggregate rate drift of ``n`` parallel Reno connections.

    Written as ``n/T^2 - x^2 price / (2n)``, which equals
    ``(x^2/(2n)) (2n^2/(T^2 x^2) - price)`` without dividing by ``x``.
    """
    x, n, T, price = (np.asarray(v, dtype=float) for v in (x, n, T, price))
    if np.any(n <= 0) or np.any(T <= 0):
        raise ValueError("n and T must be positive")
    return projection_plus(n / T**2 - x**2 * price / (2.0 * n), x)


def droptail_price(aggregate_arrival, y):
    """Fraction of arriving traffic beyond the service rate; 0 on an idle link."""
    a = np.asarray(aggregate_arrival, dtype=float)
    if np.any(a < 0):
        raise ValueError("aggregate arrival must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(a > 0, np.maximum(a - y, 0.0) / np.where(a > 0, a, 1.0), 0.0)
    return float(p) if p.ndim == 0 else p


def wired_price(aggregate_arrival, capacity):
    if np.any(np.asarray(capacity) <= 0):
        raise ValueError("capacity must be positive")
    return droptail_price(aggregate_arrival, capacity)


def end_to_end_price(r_route=(), p_route=(), exact=False):
    """Loss seen end to end. Linearised ``sum r + sum p`` by default,
    ``1 - prod(1 - .)`` with ``exact=True``."""
    prices = np.concatenate([np.ravel(np.asarray(r_route, float)), np.ravel(np.asarray(p_route, float))])
    if np.any(prices < 0) or np.any(prices > 1):
        raise ValueError("per-link prices must lie in [0, 1]")
    if exact:
        return float(1.0 - np.prod(1.0 - prices))
    return float(prices.sum())


def connection_count(T, k, integer=False):
    """``k T`` connections, or ``max(1, floor(k T))`` in integer mode."""
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("T must be positive")
    n = k * T
    if integer:
        n = np.maximum(1.0, np.floor(n))
    return float(n) if n.ndim == 0 else n


def connection_count_general(T, x, marginal_utility, k):
    """Connection count realising utility ``U``: ``k sqrt(U'(x) T^2 x^2 / 2)``."""
    mu = np.asarray(marginal_utility, dtype=float)
    if np.any(mu < 0):
        raise ValueError("marginal utility must be nonnegative")
    n = k * np.sqrt(mu * np.asarray(T, float) ** 2 * np.asarray(x, float) ** 2 / 2.0)
    return float(n) if np.ndim(n) == 0 else n


def equivalent_utility(k, utility: UtilityFunction | None = None) -> UtilityFunction:
    """Utility whose optimum is the fixed point of the proposed scheme.

    With ``n = kT`` the fixed point satisfies ``sum r = 2 k^2 / x^2``, i.e.
    the optimum for ``U(x) = -2k^2/x``. With the general connection rule for
    utility ``U`` it is the optimum for ``k^2 U``.
    """
    if utility is None:
        return alpha2(2.0 * k * k)
    return utility.scaled(k * k)


# -- state containers -------------------------------------------------------

@dataclass(frozen=True)
class SystemState:
    x: np.ndarray
    r: np.ndarray
    n: np.ndarray
    T: np.ndarray
    p_w: np.ndarray
    y: np.ndarray


@dataclass
class Trajectory:
    """Sampled solution of a fluid model."""

    times: np.ndarray
    x: np.ndarray
    r: np.ndarray
    n: np.ndarray
    T: np.ndarray
    y: np.ndarray
    p_w: np.ndarray
    flow_names: tuple
    link_names: tuple
    wired_names: tuple
    mode: str
    method: str
    dt: float
    steps: int
    events: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def state(self, i=-1) -> SystemState:
        return SystemState(self.x[i], self.r[i], self.n[i], self.T[i], self.p_w[i], self.y[i])

    @property
    def final(self) -> SystemState:
        return self.state(-1)

    def header(self):
        cols = ["t"]
        for f in self.flow_names:
            cols += [f"flow:{f}:x", f"flow:{f}:n", f"flow:{f}:T"]
        for l in self.link_names:
            cols += [f"link:{l}:r", f"link:{l}:y"]
        cols += [f"wired:{w}:p" for w in self.wired_names]
        return cols

    def rows(self, stride=1):
        idx = list(range(0, len(self.times), max(1, int(stride))))
        if idx[-1] != len(self.times) - 1:
            idx.append(len(self.times) - 1)
        for i in idx:
            row = [self.times[i]]
            for s in range(len(self.flow_names)):
                row += [self.x[i, s], self.n[i, s], self.T[i, s]]
            for l in range(len(self.link_names)):
                row += [self.r[i, l], self.y[i, l]]
            row += list(self.p_w[i])
            yield row

    def to_csv(self, path, stride=1):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in self.rows(stride):
                w.writerow([repr(float(v)) for v in row])


# -- vector field -----------------------------------------------------------

class _FluidModel:
    def __init__(self, scenario, mode, beta, alpha, k, r_max, utility, integer_connections):
        self.mode = mode
        self.family = scenario.family()
        self.A = self.family.membership
        self.R, self.W = scenario.routing()
        if mode != "proposed_wired" and mode != "reno_over_lcsma":
            self.W = self.W[:, :0]
        self.C = np.asarray(scenario.wired_capacity, float)[: self.W.shape[1]]
        self.F, self.L = self.R.shape
        self.beta, self.alpha, self.k = beta, alpha, k
        self.r_max = r_max
        self.d0 = scenario.params.propagation_delay
        self.utility = utility
        self.integer = integer_connections
        self.n_held = None
        if mode == "appendixB":
            if self.W.shape[1] or np.any(self.R.sum(axis=1) != 1) or np.any(self.R.sum(axis=0) > 1):
                raise ValueError("appendixB mode needs one single-link flow per wireless link")
            self.link_of = self.R.argmax(axis=1)
        if mode == "reno_over_lcsma":
            self.r_frozen = np.full(self.L, r_max)
            self.y_frozen = self.A.T @ stationary_distribution(self.family, self.r_frozen, beta).tau

    def split(self, z):
        return z[: self.F], z[self.F:]

    def service(self, r):
        tau = stationary_distribution(self.family, r, self.beta).tau
        return tau, self.A.T @ tau

    def evaluate(self, z, jacobian=False):
        """Vector field (unprojected) plus auxiliaries and optionally the Jacobian."""
        x, r = self.split(z)
        F, L = self.F, self.L
        if self.mode == "reno_over_lcsma":
            tau, y = None, self.y_frozen
        else:
            tau, y = self.service(r)
        link_load = self.R.T @ x
        zw = self.W.T @ x
        p_w = droptail_price(zw, self.C) if len(self.C) else np.zeros(0)
        P = self.W @ p_w

        dT_dx = np.zeros(F)
        dn_dT = np.zeros(F)
        dn_dx = np.zeros(F)
        if self.mode == "appendixB":
            rs = r[self.link_of]
            with np.errstate(divide="ignore"):
                T = np.where(x > 0, rs / (self.alpha * np.maximum(x, 1e-300)), np.inf)
            n = np.ones(F)
            fx = x**2 * (self.alpha**2 / rs**2 - rs / 2.0)
        else:
            if self.mode == "reno_over_lcsma":
                q = self.R @ self.r_frozen
                p_l = droptail_price(link_load, y)
                price = self.R @ p_l + P
            else:
                q = self.R @ r
                price = q + P
            T = self.d0 + q / self.alpha
            if self.mode == "reno_over_lcsma":
                n = np.ones(F)
            elif self.integer:
                n = self.n_held
            elif self.utility is not None:
                xs = np.maximum(x, 1e-12)
                s = np.sqrt(self.utility.marginal(xs) / 2.0)
                n = np.maximum(self.k * T * xs * s, 1e-12)
                dn_dT = self.k * xs * s
                dn_dx = self.k * T * (s + xs * self.utility.curvature(xs) / (4.0 * s))
            else:
                n = self.k * T
                dn_dT = np.full(F, self.k)
            fx = n / T**2 - x**2 * price / (2.0 * n)
        fr = np.zeros(L) if self.mode == "reno_over_lcsma" else self.alpha * (link_load - y)
        f = np.concatenate([fx, fr])
        aux = dict(tau=tau, y=y, T=T, n=n, p_w=p_w)
        if not jacobian:
            return f, aux

        J = np.zeros((F + L, F + L))
        if self.mode == "appendixB":
            rs = r[self.link_of]
            J[np.arange(F), np.arange(F)] = 2 * x * (self.alpha**2 / rs**2 - rs / 2.0)
            J[np.arange(F), F + self.link_of] = x**2 * (-2 * self.alpha**2 / rs**3 - 0.5)
        else:
            df_dx = -x * price / n
            df_dpi = -(x**2) / (2 * n)
            df_dn = 1 / T**2 + x**2 * price / (2 * n**2)
            df_dT = -2 * n / T**3
            self_x = df_dx + df_dn * (dn_dx + dn_dT * dT_dx) + df_dT * dT_dx
            J[:F, :F] = np.diag(self_x)
            dpi_dx = np.zeros((F, F))
            if len(self.C):
                slope = np.where(zw > self.C, self.C / np.maximum(zw, 1e-300) ** 2, 0.0)
                dpi_dx += self.W @ np.diag(slope) @ self.W.T
            if self.mode == "reno_over_lcsma":
                slope = np.where(link_load > y, y / np.maximum(link_load, 1e-300) ** 2, 0.0)
                dpi_dx += self.R @ np.diag(slope) @ self.R.T
            else:
                dq = df_dpi + (df_dn * dn_dT + df_dT) / self.alpha
                J[:F, F:] = dq[:, None] * self.R
            J[:F, :F] += df_dpi[:, None] * dpi_dx
        if self.mode != "reno_over_lcsma":
            J[F:, :F] = self.alpha * self.R.T
            H = self.beta * (self.A.T @ (tau[:, None] * self.A) - np.outer(y, y))
            J[F:, F:] = -self.alpha * H
        return f, aux, J

    def blocked(self, z, f):
        """Components pinned at a bound because the field points outward."""
        x, r = self.split(z)
        fx, fr = self.split(f)
        bx = (x <= 0) & (fx < 0)
        br = (r <= 0) & (fr < 0)
        if self.r_max is not None:
            br |= (r >= self.r_max) & (fr > 0)
        if self.mode == "reno_over_lcsma":
            br[:] = True
        return np.concatenate([bx, br])

    def field(self, z):
        f, aux = self.evaluate(z)
        f = np.where(self.blocked(z, f), 0.0, f)
        return f, aux

    def clip(self, z):
        z = z.copy()
        # x = 0 is absorbing for the x^2-scaled Reno field of appendixB mode,
        # so both x and r are kept off zero there
        lo = 1e-12 if self.mode == "appendixB" else 0.0
        z[: self.F] = np.maximum(z[: self.F], lo)
        z[self.F:] = np.maximum(z[self.F:], lo)
        if self.r_max is not None:
            z[self.F:] = np.minimum(z[self.F:], self.r_max)
        return z


def _check_finite(z, t, last):
    if not np.all(np.isfinite(z)) or np.any(np.abs(z) > DIVERGENCE_LIMIT):
        raise IntegrationDiverged(f"state diverged at t={t:g}", t, last)


def integrate_system(
    scenario: Scenario,
    mode: str = "proposed",
    horizon: float | None = None,
    dt: float | None = None,
    *,
    method: str = "euler",
    beta: float | None = None,
    alpha: float | None = None,
    k: float | None = None,
    r_max: float | None = None,
    utility: UtilityFunction | None = None,
    integer_connections: bool = False,
    x0=0.1,
    r0=None,
    sample_every: int = 1,
    rtol: float = 1e-4,
    atol: float = 1e-8,
    steady_tol: float | None = None,
    max_steps: int = 10_000_000,
) -> Trajectory:
    """Integrate one of the fluid models.

    Parameters
    ----------
    mode : {"proposed", "proposed_wired", "appendixB", "reno_over_lcsma"}
    method : {"euler", "rk4", "implicit"}
        ``euler`` and ``rk4`` take fixed steps of ``dt``. ``implicit`` is a
        linearly implicit Euler scheme with step-doubling error control,
        starting at ``dt``; its fixed points are exactly the zeros of the
        vector field, and it copes with the stiffness of large ``beta``.
    beta, alpha, k : float, optional
        Overrides for the scenario parameters. ``beta`` defaults to
        ``params.beta_reno`` for the two Reno modes and ``params.beta``
        otherwise.
    r_max : float, optional
        TA ceiling. Defaults to ``params.r_max`` in ``reno_over_lcsma`` mode
        (where TA is frozen there) and to no ceiling otherwise.
    utility : UtilityFunction, optional
        Use the general connection-count rule for this utility instead of
        ``n = kT``.
    integer_connections : bool
        Hold ``n = max(1, floor(kT))`` between updates every
        ``params.connection_update_interval``.
    x0, r0 : float or array
        Initial rates and TA (``r0`` defaults to 0, or 0.05 in appendixB
        mode where the RTT closure needs positive TA).
    steady_tol : float, optional
        Stop once every component of the projected vector field is below
        this value.

    Raises
    ------
    IntegrationDiverged
        When a component becomes non-finite or exceeds 1e9.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    p = scenario.params
    horizon = p.horizon if horizon is None else float(horizon)
    dt = p.dt if dt is None else float(dt)
    if not dt > 0 or horizon < dt:
        raise ValueError("need dt > 0 and horizon >= dt")
    reno = mode in ("appendixB", "reno_over_lcsma")
    beta = (p.beta_reno if reno else p.beta) if beta is None else beta
    alpha = p.alpha if alpha is None else alpha
    k = p.k if k is None else k
    if mode == "reno_over_lcsma" and r_max is None:
        r_max = p.r_max
    if mode == "proposed" and scenario.has_wired:
        raise ValueError("scenario has wired links; use mode='proposed_wired'")
    if integer_connections and mode not in ("proposed", "proposed_wired"):
        raise ValueError("integer connections apply to the proposed modes only")

    model = _FluidModel(scenario, mode, beta, alpha, k, r_max, utility, integer_connections)
    F, L = model.F, model.L
    x = np.broadcast_to(np.asarray(x0, float), (F,)).copy()
    if r0 is None:
        r0 = 0.05 if mode == "appendixB" else 0.0
    r = np.broadcast_to(np.asarray(r0, float), (L,)).copy()
    if mode == "reno_over_lcsma":
        r[:] = r_max
    z = model.clip(np.concatenate([x, r]))

    next_conn_update = math.inf
    if integer_connections:
        T0 = p.propagation_delay + model.R @ z[F:] / alpha
        model.n_held = connection_count(T0, k, integer=True) * np.ones(F)
        next_conn_update = p.connection_update_interval

    rows = []
    events = []
    saturated = np.zeros(L, dtype=bool)

    def record(t, z, aux):
        rows.append((t, z[:F].copy(), z[F:].copy(), np.array(aux["n"], float).copy(),
                     np.array(aux["T"], float).copy(), np.array(aux["y"], float).copy(),
                     np.array(aux["p_w"], float).copy()))

    def note_saturation(t, z):
        if r_max is None or mode == "reno_over_lcsma":
            return
        now = z[F:] >= r_max
        for l in np.flatnonzero(now != saturated):
            events.append((t, "saturation_start" if now[l] else "saturation_end", scenario.graph.names[l]))
        saturated[:] = now

    t = 0.0
    f, aux = model.field(z)
    record(t, z, aux)
    steps = 0
    h = dt

    def implicit_step(z, h):
        f, aux, J = model.evaluate(z, jacobian=True)
        free = ~model.blocked(z, f)
        d = np.zeros_like(z)
        if free.any():
            M = np.eye(int(free.sum())) - h * J[np.ix_(free, free)]
            try:
                d[free] = np.linalg.solve(M, h * f[free])
            except np.linalg.LinAlgError:
                d[free] = h * f[free]
        return model.clip(z + d)

    while t < horizon - 1e-12 * max(1.0, horizon) and steps < max_steps:
        limit = min(horizon, next_conn_update) - t
        last = z
        if method == "implicit":
            h = min(h, limit)
            while True:
                z1 = implicit_step(z, h)
                zh = implicit_step(z, h / 2)
                z2 = implicit_step(zh, h / 2)
                _check_finite(z2, t + h, last)
                err = float(np.max(np.abs(z2 - z1) / (atol + rtol * np.abs(z2))))
                if err <= 1.0 or h < 1e-14:
                    break
                h *= max(0.2, 0.9 / math.sqrt(err))
            z = z2
            t += h
            h_next = h * min(4.0, max(0.2, 0.9 / math.sqrt(max(err, 1e-12))))
            h = h_next
        else:
            hh = min(dt, limit)
            if method == "euler":
                f, _ = model.field(z)
                z = model.clip(z + hh * f)
            else:
                k1, _ = model.field(z)
                k2, _ = model.field(model.clip(z + hh / 2 * k1))
                k3, _ = model.field(model.clip(z + hh / 2 * k2))
                k4, _ = model.field(model.clip(z + hh * k3))
                z = model.clip(z + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
            t += hh
        steps += 1
        _check_finite(z, t, last)
        note_saturation(t, z)
        if integer_connections and t >= next_conn_update - 1e-12:
            T_now = p.propagation_delay + model.R @ z[F:] / alpha
            model.n_held = connection_count(T_now, k, integer=True) * np.ones(F)
            events.append((t, "connection_update", tuple(model.n_held)))
            next_conn_update += p.connection_update_interval
        f, aux = model.field(z)
        done = t >= horizon - 1e-12 * max(1.0, horizon)
        steady = steady_tol is not None and float(np.max(np.abs(f), initial=0.0)) < steady_tol
        if steps % max(1, sample_every) == 0 or done or steady:
            record(t, z, aux)
        if steady:
            events.append((t, "steady_state", None))
            break

    if rows[-1][0] != t:
        f, aux = model.field(z)
        record(t, z, aux)
    cols = list(zip(*rows))
    return Trajectory(
        times=np.array(cols[0]),
        x=np.array(cols[1]),
        r=np.array(cols[2]),
        n=np.array(cols[3]),
        T=np.array(cols[4]),
        y=np.array(cols[5]),
        p_w=np.array(cols[6]).reshape(len(rows), -1),
        flow_names=tuple(f.name for f in scenario.flows),
        link_names=scenario.graph.names,
        wired_names=tuple(scenario.wired_names[: model.W.shape[1]]),
        mode=mode,
        method=method,
        dt=dt,
        steps=steps,
        events=events,
    )
