"""Command-line front end: ``acsma {solve,integrate,simulate,compare,capacity}``.

Exit codes: 0 success, 1 numerical failure (divergence or non-convergence),
2 input error. Output files go to ``--out``, or ``$ACSMA_OUT``, or
``./acsma_out``.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .csma import LCSMA_RHO, lcsma_throughput
from .dynamics import METHODS, MODES, IntegrationDiverged, integrate_system
from .mac_sim import simulate_acsma_aqm, simulate_csma
from .optimizer import alpha2, capacity_membership, solve_ep, solve_mp, utility_gap
from .scenario import BUILTIN_NAMES, Scenario, ScenarioError, builtin_topology, load_scenario

OUT_ENV = "ACSMA_OUT"
DEFAULT_OUT = "acsma_out"
# integration horizon per mode when --horizon is not given
MODE_HORIZON = {"proposed": 1e7, "proposed_wired": 1e7, "appendixB": 1e5, "reno_over_lcsma": 1e4}


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


class NumericalFailure(Exception):
    """Solver or integrator failure; reported with exit code 1."""


# -- helpers -----------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def load(args) -> Scenario:
    """Scenario from ``--topology``/``--scenario`` with parameter overrides."""
    if args.scenario:
        try:
            scenario = load_scenario(args.scenario)
        except OSError as exc:
            raise InputError(f"cannot read scenario: {exc}") from None
    else:
        scenario = builtin_topology(args.topology or "a")
    overrides = {}
    for flag, key in (("beta", "beta"), ("alpha", "alpha"), ("k", "k"), ("rmax", "r_max"),
                      ("dt", "dt"), ("horizon", "horizon")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return scenario.with_params(**overrides) if overrides else scenario


def out_dir(args) -> Path:
    path = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    path.mkdir(parents=True, exist_ok=True)
    return path


def lcsma_flow_rates(scenario: Scenario, rho: float = LCSMA_RHO) -> np.ndarray:
    """Flow rates under legacy CSMA with equal access intensity ``rho``.

    Each wireless link's throughput is split equally among the flows using
    it, a flow gets the minimum share along its route, and flows through an
    overloaded wired link are scaled down proportionally.
    """
    R, W = scenario.routing()
    y = lcsma_throughput(scenario.family(), rho)
    users = np.maximum(R.sum(axis=0), 1.0)
    share = y / users
    x = np.array([share[R[s] > 0].min() if R[s].any() else np.inf for s in range(len(R))])
    C = np.asarray(scenario.wired_capacity, float)
    for w in range(W.shape[1]):
        on = W[:, w] > 0
        # wired-only flows are limited by the wired link alone
        x[on] = np.where(np.isinf(x[on]), C[w] / max(on.sum(), 1), x[on])
        load_w = x[on].sum()
        if load_w > C[w]:
            x[on] *= C[w] / load_w
    return x


# -- commands ----------------------------------------------------------------


def cmd_solve(args) -> int:
    scenario = load(args)
    solver = solve_ep if scenario.has_wired else solve_mp
    sol = solver(scenario, beta=scenario.params.beta, tol=args.tol)
    out = out_dir(args)
    stem = f"solve_{scenario.name}"
    sol.to_csv(out / f"{stem}.csv")
    report = sol.report()
    (out / f"{stem}.txt").write_text(report + "\n")
    print(report)
    if not sol.converged:
        raise NumericalFailure(f"solver stopped with KKT residual {sol.kkt_residual:.3e} > {args.tol:g}")
    return 0


def _default_mode(scenario: Scenario) -> str:
    return "proposed_wired" if scenario.has_wired else "proposed"


def cmd_integrate(args) -> int:
    scenario = load(args)
    mode = args.mode or _default_mode(scenario)
    horizon = args.horizon if args.horizon is not None else MODE_HORIZON[mode]
    dt = args.dt if args.dt is not None else (0.1 if mode == "appendixB" else scenario.params.dt)
    beta = args.beta  # None keeps the per-mode default
    try:
        traj = integrate_system(scenario, mode, horizon=horizon, dt=dt, method=args.method, beta=beta,
                                r_max=args.rmax, integer_connections=args.integer_connections,
                                sample_every=args.sample_every)
    except IntegrationDiverged as exc:
        raise NumericalFailure(str(exc)) from None
    out = out_dir(args)
    path = out / f"integrate_{scenario.name}_{mode}.csv"
    traj.to_csv(path)
    fin = traj.final
    print(f"mode {mode}, method {traj.method}, {traj.steps} steps, t = {traj.times[-1]:g}")
    print("flow        x           n           T")
    for f, x, n, T in zip(traj.flow_names, fin.x, fin.n, fin.T):
        print(f"{f:<10}  {x:<10.6f}  {n:<10.4f}  {T:<10.4f}")
    print("link        r           y")
    for l, r, y in zip(traj.link_names, fin.r, fin.y):
        print(f"{l:<10}  {r:<10.6f}  {y:<10.6f}")
    for w, p in zip(traj.wired_names, fin.p_w):
        print(f"wired {w:<6}  p = {p:.6f}")
    print(f"trajectory written to {path}")
    return 0


def _csma_run(scenario, r, beta, horizon, seed):
    return seed, simulate_csma(scenario, r, beta, horizon, seed=seed)


def cmd_simulate(args) -> int:
    scenario = load(args)
    p = scenario.params
    beta = p.beta if args.beta is not None else p.beta_reno
    horizon = args.horizon if args.horizon is not None else 1e6
    out = out_dir(args)
    seeds = [args.seed + i for i in range(args.replications)]
    if args.kind == "csma":
        r = np.asarray(args.r if args.r is not None else [np.log(LCSMA_RHO) / beta], float)
        if r.size == 1:
            r = np.full(scenario.link_count, float(r[0]))
        if r.size != scenario.link_count:
            raise InputError(f"--r needs {scenario.link_count} values")
        with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
            results = list(pool.map(lambda s: _csma_run(scenario, r, beta, horizon, s), seeds))
        lines = [f"CSMA simulation on {scenario.name}: beta={beta:g}, horizon={horizon:g}",
                 "seed      TV distance   airtime"]
        for seed, res in results:
            lines.append(f"{seed:<8d}  {res.tv_distance():<12.6f}  " + " ".join(f"{a:.4f}" for a in res.airtime))
        tvs = [res.tv_distance() for _, res in results]
        lines.append(f"median TV {np.median(tvs):.6f}")
        exact = results[0][1].exact()
        lines.append("exact y   " + " ".join(f"{v:.4f}" for v in exact.family.membership.T @ exact.tau))
        text = "\n".join(lines)
        (out / f"simulate_{scenario.name}_csma.txt").write_text(text + "\n")
        print(text)
        return 0
    if args.arrivals is None:
        raise InputError("--arrivals is required for --kind aqm")
    fixed = "lcsma" if args.lcsma else None
    arrivals = args.arrivals[0] if len(args.arrivals) == 1 else args.arrivals
    for seed in seeds:
        trace = simulate_acsma_aqm(scenario, arrivals, alpha=args.alpha, beta=beta,
                                   update_interval=p.update_interval, horizon=horizon, seed=seed,
                                   fixed_r=fixed, log_capacity=args.log)
        stem = f"simulate_{scenario.name}_aqm_seed{seed}"
        trace.to_csv(out / f"{stem}_trace.csv")
        if trace.log is not None:
            trace.log.to_csv(out / f"{stem}_events.csv", scenario.graph.names)
        text = trace.summary()
        (out / f"{stem}.txt").write_text(text + "\n")
        print(f"seed {seed}")
        print(text)
    return 0


def cmd_compare(args) -> int:
    scenario = load(args)
    beta = scenario.params.beta
    k = scenario.params.k
    utility = alpha2()
    solver = solve_ep if scenario.has_wired else solve_mp
    ref = solver(scenario, beta=beta, utility=utility)
    if not ref.converged:
        raise NumericalFailure("reference optimum did not converge")
    mode = _default_mode(scenario)
    try:
        traj = integrate_system(scenario, mode, horizon=MODE_HORIZON[mode], method="implicit")
    except IntegrationDiverged as exc:
        raise NumericalFailure(str(exc)) from None
    rows = [("L-CSMA", lcsma_flow_rates(scenario)), ("proposed-fluid", traj.final.x)]
    u_star = float(np.sum(utility.value(ref.x_star)))
    names = [f.name for f in scenario.flows]
    head = f"{'scheme':<16}" + "".join(f"{n:>10}" for n in names) + f"{'dU':>14}{'dU/|U*|':>12}"
    lines = [f"topology {scenario.name}: beta={beta:g}, k={k:g}, rho={LCSMA_RHO}, U(x) = -1/x",
             head, f"{'optimum':<16}" + "".join(f"{v:>10.4f}" for v in ref.x_star) + f"{0.0:>14.6f}{0.0:>12.6f}"]
    for label, x in rows:
        if np.all(x > 0):
            gap = utility_gap(x, ref.x_star, utility)
            rel = gap / abs(u_star)
            tail = f"{gap:>14.6f}{rel:>12.6f}"
        else:
            tail = f"{'-inf':>14}{'-inf':>12}"
        lines.append(f"{label:<16}" + "".join(f"{v:>10.4f}" for v in x) + tail)
    text = "\n".join(lines)
    out = out_dir(args)
    (out / f"compare_{scenario.name}.txt").write_text(text + "\n")
    print(text)
    return 0


def cmd_capacity(args) -> int:
    scenario = load(args)
    if args.y is None:
        raise InputError("--y is required")
    if len(args.y) != scenario.link_count:
        raise InputError(f"--y needs {scenario.link_count} values")
    try:
        res = capacity_membership(scenario.family(), args.y)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    lines = [f"verdict {res.verdict}", f"gauge   {res.gauge:.6g}"]
    sets = scenario.family().as_sets()
    names = scenario.graph.names
    if res.tau is not None:
        lines.append("certificate (schedule probabilities):")
        for s, p in zip(sets, res.tau):
            if p > 1e-12:
                label = "{" + ",".join(names[i] for i in sorted(s)) + "}"
                lines.append(f"  {label:<16} {p:.6f}")
    if res.weights is not None:
        lines.append("separating link weights:")
        lines += [f"  {n:<8} {w:.6f}" for n, w in zip(names, res.weights)]
    text = "\n".join(lines)
    out = out_dir(args)
    (out / f"capacity_{scenario.name}.txt").write_text(text + "\n")
    print(text)
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--topology", choices=BUILTIN_NAMES, help="builtin topology (default: a)")
    src.add_argument("--scenario", metavar="PATH", help="scenario file")
    common.add_argument("--beta", type=_positive, help="CSMA sharpness beta")
    common.add_argument("--alpha", type=_positive, help="TA step size / queue-to-TA gain")
    common.add_argument("--k", type=_positive, help="connections per second of RTT")
    common.add_argument("--rmax", type=_positive, help="TA ceiling")
    common.add_argument("--dt", type=_positive, help="integration step")
    common.add_argument("--horizon", type=_positive, help="simulated time")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")

    parser = argparse.ArgumentParser(prog="acsma", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     epilog=f"Output directory: --out, else ${OUT_ENV}, else ./{DEFAULT_OUT}.\n"
                                            "Exit codes: 0 ok, 1 numerical failure, 2 input error.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve MP (or EP when wired links exist)")
    p.add_argument("--tol", type=_positive, default=1e-6, help="KKT tolerance (default 1e-6)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("integrate", parents=[common], help="integrate a fluid model")
    p.add_argument("--mode", choices=MODES, help="fluid model (default proposed / proposed_wired)")
    p.add_argument("--method", choices=METHODS, default="implicit", help="integrator (default implicit)")
    p.add_argument("--integer-connections", action="store_true", help="hold n = max(1, floor(kT))")
    p.add_argument("--sample-every", type=int, default=10, help="record every Nth step")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("simulate", parents=[common], help="discrete-event MAC simulation")
    p.add_argument("--kind", choices=("csma", "aqm"), default="csma")
    p.add_argument("--r", type=_floats, help="TA per link for --kind csma (default ln(2.24)/beta)")
    p.add_argument("--arrivals", type=_floats, help="packet arrival rate per link (one value is broadcast) for --kind aqm")
    p.add_argument("--lcsma", action="store_true", help="freeze TA at ln(2.24)/beta in aqm mode")
    p.add_argument("--log", type=int, default=0, metavar="N", help="keep up to N events and write them as CSV")
    p.add_argument("--replications", type=int, default=1, help="independent runs with seeds seed, seed+1, ...")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker threads for replications")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", parents=[common], help="L-CSMA vs proposed scheme utility table")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("capacity", parents=[common], help="capacity-region membership of link rates")
    p.add_argument("--y", type=_floats, help="comma-separated link rates")
    p.set_defaults(func=cmd_capacity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "replications", 1) < 1:
        parser.error("--replications must be at least 1")
    try:
        return args.func(args)
    except (ScenarioError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
