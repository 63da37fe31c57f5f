"""Discrete-event simulation of the CSMA chain and of queue-driven A-CSMA.

Two entry points:

``simulate_csma``
    Idle links count down an exponential period of mean ``exp(-beta r_l)``,
    transmit for an exponential period of mean one, and freeze their
    countdown while a conflicting link transmits (the residual is resumed,
    not redrawn). Returns the time-weighted empirical distribution over
    independent sets.

``simulate_acsma_aqm``
    The per-link AQM loop: Poisson arrivals of unit packets, tail drop with
    probability ``min(r_l, 1)``, unit transmission times, a dummy packet
    whenever the queue is empty, and ``r_l <- alpha Q_l`` every
    ``update_interval`` time units.

Each link draws from its own generator, spawned from the run seed, so a run
is fully determined by its seed and arrival processes are shared between a
fixed-TA and an adaptive run with the same seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .csma import LCSMA_RHO, ScheduleDistribution, as_ta_vector, stationary_distribution
from .graph import ConflictGraph, IndependentSetFamily, enumerate_independent_sets
from .scenario import Scenario

BUFFER_SIZE = 1 << 16
KIND_NAMES = K.KIND_NAMES


class ScheduleViolation(RuntimeError):
    """Two conflicting links were found transmitting at once."""


@dataclass(frozen=True)
class MacEvent:
    time: float
    link: int
    kind: str
    queue: int
    r: float


@dataclass
class EventLog:
    """Columnar event log; ``truncated`` is set when the capacity ran out."""

    time: np.ndarray
    link: np.ndarray
    kind: np.ndarray
    queue: np.ndarray
    r: np.ndarray
    truncated: bool = False

    def __len__(self):
        return len(self.time)

    def __iter__(self):
        for i in range(len(self)):
            yield MacEvent(float(self.time[i]), int(self.link[i]), KIND_NAMES[self.kind[i]],
                           int(self.queue[i]), float(self.r[i]))

    def to_csv(self, path, link_names=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "link", "kind", "queue", "r"])
            for ev in self:
                name = link_names[ev.link] if link_names is not None else ev.link
                w.writerow([repr(ev.time), name, ev.kind, ev.queue, repr(ev.r)])


class _Streams:
    """One generator per link for MAC draws and one per link for arrivals."""

    def __init__(self, seed, links):
        ss = np.random.SeedSequence(seed)
        mac, arr = ss.spawn(2)
        self.mac = [np.random.Generator(np.random.PCG64(s)) for s in mac.spawn(links)]
        self.arr = [np.random.Generator(np.random.PCG64(s)) for s in arr.spawn(links)]

    @staticmethod
    def fill(gens, buf, pos, link=None):
        links = range(len(gens)) if link is None else [link]
        for l in links:
            buf[l] = gens[l].random(buf.shape[1])
            pos[l] = 0


class _Engine:
    """Array state of one simulation run, driven by the compiled kernel."""

    def __init__(self, family: IndependentSetFamily, r, beta, seed, *, aqm=False, exp_tx=True,
                 adapt=False, alpha=0.0, update_interval=1.0, arrival_rate=None,
                 horizon=1.0, log_capacity=0, buffer_size=BUFFER_SIZE):
        L = family.link_count
        self.family, self.L = family, L
        self.streams = _Streams(seed, L)
        self.nbr = family.graph.neighbor_masks()
        self.masks = family.masks
        self.occupancy = np.zeros(len(family))
        self.busy = np.zeros(L)
        self.active = np.zeros(L, np.int8)
        self.blocked = np.zeros(L, np.int64)
        self.remaining = np.zeros(L)
        self.tx_end = np.full(L, np.inf)
        self.carrying = np.zeros(L, np.int8)
        self.r = np.array(r, dtype=float)
        self.rate = np.exp(beta * self.r)
        self.beta = float(beta)
        self.mac_buf = np.empty((L, buffer_size))
        self.mac_pos = np.zeros(L, np.int64)
        _Streams.fill(self.streams.mac, self.mac_buf, self.mac_pos)
        self.aqm, self.exp_tx, self.adapt = aqm, exp_tx, adapt
        self.alpha, self.update_interval = float(alpha), float(update_interval)
        self.arr_rate = np.zeros(L) if arrival_rate is None else np.asarray(arrival_rate, float)
        self.arr_buf = np.empty((L, buffer_size if aqm else 1))
        self.arr_pos = np.zeros(L, np.int64)
        self.next_arrival = np.full(L, np.inf)
        if aqm:
            _Streams.fill(self.streams.arr, self.arr_buf, self.arr_pos)
            for l in range(L):
                if self.arr_rate[l] > 0:
                    with np.errstate(over="ignore"):  # subnormal rates give inf: never arrives
                        self.next_arrival[l] = -np.log1p(-self.arr_buf[l, 0]) / self.arr_rate[l]
                    self.arr_pos[l] = 1
        self.deadline = np.empty(L)
        for l in range(L):
            self.deadline[l] = -np.log1p(-self.mac_buf[l, 0]) / self.rate[l]
            self.mac_pos[l] = 1
        self.queue = np.zeros(L, np.int64)
        self.arrived = np.zeros(L, np.int64)
        self.served = np.zeros(L, np.int64)
        self.dropped = np.zeros(L, np.int64)
        self.dummies = np.zeros(L, np.int64)
        n_trace = int(horizon // update_interval) + 2 if aqm else 0
        self.trace_r = np.zeros((n_trace, L))
        self.trace_q = np.zeros((n_trace, L), np.int64)
        self.trace_served = np.zeros((n_trace, L), np.int64)
        self.trace_dropped = np.zeros((n_trace, L), np.int64)
        self.trace_busy = np.zeros((n_trace, L))
        self.log_t = np.zeros(log_capacity)
        self.log_link = np.zeros(log_capacity, np.int64)
        self.log_kind = np.zeros(log_capacity, np.int64)
        self.log_q = np.zeros(log_capacity, np.int64)
        self.log_r = np.zeros(log_capacity)
        self.fscal = np.array([0.0, update_interval if aqm else np.inf])
        self.iscal = np.zeros(6, np.int64)
        self.log_dropped = False

    def run(self, horizon):
        while True:
            status = K.run(
                float(horizon), self.fscal, self.iscal,
                self.nbr, self.masks, self.occupancy, self.busy,
                self.active, self.blocked, self.deadline, self.remaining, self.tx_end, self.carrying,
                self.rate, self.r, self.beta,
                self.mac_buf, self.mac_pos,
                self.aqm, self.exp_tx, self.adapt, self.alpha, self.update_interval,
                self.arr_rate, self.next_arrival, self.arr_buf, self.arr_pos,
                self.queue, self.arrived, self.served, self.dropped, self.dummies,
                self.trace_r, self.trace_q, self.trace_served, self.trace_dropped, self.trace_busy,
                self.log_t, self.log_link, self.log_kind, self.log_q, self.log_r,
            )
            if status == K.DONE:
                return
            link = int(self.iscal[K.I_REFILL_LINK])
            if status == K.NEED_REFILL_MAC:
                _Streams.fill(self.streams.mac, self.mac_buf, self.mac_pos, link)
            elif status == K.NEED_REFILL_ARRIVAL:
                _Streams.fill(self.streams.arr, self.arr_buf, self.arr_pos, link)
            else:
                raise ScheduleViolation(
                    f"conflicting links active together at t={self.fscal[K.S_TIME]:g}")

    def event_log(self) -> EventLog:
        n = int(self.iscal[K.I_LOG_POS])
        cap = len(self.log_t)
        return EventLog(self.log_t[:n].copy(), self.log_link[:n].copy(), self.log_kind[:n].copy(),
                        self.log_q[:n].copy(), self.log_r[:n].copy(), truncated=cap > 0 and n >= cap)


def _as_family(graph_or_family) -> IndependentSetFamily:
    if isinstance(graph_or_family, IndependentSetFamily):
        return graph_or_family
    if isinstance(graph_or_family, ConflictGraph):
        return enumerate_independent_sets(graph_or_family)
    if isinstance(graph_or_family, Scenario):
        return graph_or_family.family()
    raise TypeError("expected a ConflictGraph, IndependentSetFamily or Scenario")


# -- plain CSMA --------------------------------------------------------------


@dataclass
class CsmaSimResult:
    """Outcome of :func:`simulate_csma`."""

    empirical: ScheduleDistribution
    airtime: np.ndarray
    horizon: float
    events: int
    r: np.ndarray
    beta: float
    log: EventLog | None = None

    def exact(self) -> ScheduleDistribution:
        return stationary_distribution(self.empirical.family, self.r, self.beta)

    def tv_distance(self) -> float:
        """Total-variation distance to the product-form law."""
        return self.empirical.total_variation(self.exact())


def simulate_csma(graph, r, beta: float, horizon: float, seed=0, *, log_capacity: int = 0) -> CsmaSimResult:
    """Simulate the CSMA chain with TA vector ``r`` up to time ``horizon``.

    Parameters
    ----------
    graph : ConflictGraph, IndependentSetFamily or Scenario
    r : array_like
        TA per link (a scalar is broadcast).
    beta : float
    horizon : float
    seed : int or SeedSequence entropy
    log_capacity : int
        Keep up to this many events in ``result.log``.
    """
    family = _as_family(graph)
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not beta > 0:
        raise ValueError("beta must be positive")
    r = as_ta_vector(r, family.link_count)
    eng = _Engine(family, r, beta, seed, horizon=horizon, log_capacity=log_capacity)
    eng.run(horizon)
    occ = eng.occupancy / eng.occupancy.sum()
    occ /= occ.sum()
    return CsmaSimResult(
        empirical=ScheduleDistribution(occ, family),
        airtime=eng.busy / horizon,
        horizon=float(horizon),
        events=int(eng.iscal[K.I_EVENTS]),
        r=r,
        beta=float(beta),
        log=eng.event_log() if log_capacity else None,
    )


# -- A-CSMA with AQM ---------------------------------------------------------


@dataclass
class AqmTrace:
    """Outcome of :func:`simulate_acsma_aqm`.

    Trace arrays hold one row per TA update (sampled just after the update);
    counters are cumulative. ``airtime`` includes dummy packets.
    """

    times: np.ndarray
    r: np.ndarray
    queue: np.ndarray
    served_cum: np.ndarray
    dropped_cum: np.ndarray
    busy_cum: np.ndarray
    arrived: np.ndarray
    served: np.ndarray
    dropped: np.ndarray
    queued: np.ndarray
    dummies: np.ndarray
    horizon: float
    link_names: tuple
    arrival_rate: np.ndarray
    adaptive: bool
    log: EventLog | None = None

    @property
    def airtime(self) -> np.ndarray:
        return self.busy_cum[-1] / self.times[-1] if len(self.times) else np.zeros(len(self.link_names))

    def service_rate(self) -> np.ndarray:
        """Packets served per unit time."""
        return self.served / self.horizon

    def arrival_throughput(self) -> np.ndarray:
        """Packets that arrived per unit time."""
        return self.arrived / self.horizon

    def conservation_error(self) -> np.ndarray:
        """``arrived - served - dropped - queued`` per link (zero by construction)."""
        return self.arrived - self.served - self.dropped - self.queued

    def summary(self) -> str:
        lines = [f"scheme   {'A-CSMA/AQM' if self.adaptive else 'fixed TA'}",
                 f"horizon  {self.horizon:g}",
                 "link        arrival   served/t  airtime   arrived   served    dropped   queued    dummies"]
        air = self.airtime
        for i, name in enumerate(self.link_names):
            lines.append(
                f"{name:<10}  {self.arrival_rate[i]:<8.4f}  {self.served[i] / self.horizon:<8.4f}  "
                f"{air[i]:<8.4f}  {self.arrived[i]:<8d}  {self.served[i]:<8d}  {self.dropped[i]:<8d}  "
                f"{self.queued[i]:<8d}  {self.dummies[i]:<8d}")
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["t"]
            for name in self.link_names:
                head += [f"link:{name}:r", f"link:{name}:queue", f"link:{name}:served", f"link:{name}:dropped"]
            w.writerow(head)
            for i, t in enumerate(self.times):
                row = [repr(float(t))]
                for l in range(len(self.link_names)):
                    row += [repr(float(self.r[i, l])), int(self.queue[i, l]),
                            int(self.served_cum[i, l]), int(self.dropped_cum[i, l])]
                w.writerow(row)


def simulate_acsma_aqm(
    scenario,
    arrivals,
    alpha: float | None = None,
    beta: float | None = None,
    update_interval: float | None = None,
    horizon: float | None = None,
    seed=0,
    *,
    fixed_r=None,
    log_capacity: int = 0,
) -> AqmTrace:
    """Run the queue-driven A-CSMA/AQM loop on the wireless links.

    Parameters
    ----------
    scenario : Scenario, ConflictGraph or IndependentSetFamily
        Only the conflict graph is used; parameter defaults come from
        ``scenario.params`` when a Scenario is given.
    arrivals : array_like
        Poisson packet arrival rate per wireless link (packets per unit time).
    alpha, beta, update_interval, horizon : float, optional
    fixed_r : float or array_like, optional
        Freeze the TA at this value instead of ``alpha Q`` (legacy CSMA with
        the same AQM dropping rule). ``"lcsma"`` uses ``ln(2.24) / beta``.
    """
    family = _as_family(scenario)
    params = scenario.params if isinstance(scenario, Scenario) else None
    def pick(v, name):
        if v is not None:
            return float(v)
        if params is None:
            raise ValueError(f"{name} is required when no Scenario is given")
        return float(getattr(params, name))
    alpha = pick(alpha, "alpha")
    beta = pick(beta, "beta")
    update_interval = pick(update_interval, "update_interval")
    horizon = pick(horizon, "horizon")
    for name, v in (("alpha", alpha), ("beta", beta), ("update_interval", update_interval), ("horizon", horizon)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    lam = np.asarray(arrivals, dtype=float)
    if lam.ndim == 0:
        lam = np.full(family.link_count, float(lam))
    if lam.shape != (family.link_count,) or np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("arrivals must be one nonnegative rate per wireless link")
    if isinstance(fixed_r, str):
        if fixed_r != "lcsma":
            raise ValueError("fixed_r must be numeric or 'lcsma'")
        fixed_r = np.log(LCSMA_RHO) / beta
    adapt = fixed_r is None
    r0 = np.zeros(family.link_count) if adapt else as_ta_vector(fixed_r, family.link_count)
    if np.any(r0 < 0):
        raise ValueError("fixed TA must be nonnegative")
    eng = _Engine(family, r0, beta, seed, aqm=True, exp_tx=False, adapt=adapt, alpha=alpha,
                  update_interval=update_interval, arrival_rate=lam, horizon=horizon,
                  log_capacity=log_capacity)
    eng.run(horizon)
    n = int(eng.iscal[K.I_TRACE_POS])
    n = min(n, len(eng.trace_r))
    times = update_interval * np.arange(1, n + 1)
    return AqmTrace(
        times=times, r=eng.trace_r[:n].copy(), queue=eng.trace_q[:n].copy(),
        served_cum=eng.trace_served[:n].copy(), dropped_cum=eng.trace_dropped[:n].copy(),
        busy_cum=eng.trace_busy[:n].copy(),
        arrived=eng.arrived.copy(), served=eng.served.copy(), dropped=eng.dropped.copy(),
        queued=eng.queue.copy(), dummies=eng.dummies.copy(), horizon=horizon,
        link_names=family.graph.names, arrival_rate=lam, adaptive=adapt,
        log=eng.event_log() if log_capacity else None,
    )
