"""Command-line driver: ``storvol {solve,sweep,size,report}``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .equilibrium import ConvergenceError, solve_equilibrium
from .io import InstanceError, ResultBundle, audit_results, emit_results, load_instance
from .market import ModelError
from .sizing import STORAGE_MODES, SizingError, SweepPlan, VolatilityTarget, minimal_storage_capacity, \
    volatility_curve

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3
EXIT_INFEASIBLE = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="storvol", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("instance", help="instance JSON file")
        sp.add_argument("--out", help="directory for result tables")
        sp.add_argument("--tol-kkt", type=float)
        sp.add_argument("--max-iters", type=int)
        sp.add_argument("--multistart", type=int)
        sp.add_argument("--damping", type=float)
        sp.add_argument("--seed", type=int)

    solve = sub.add_parser("solve", help="one lower-level equilibrium")
    common(solve)

    for name, helptext in (("sweep", "volatility curve over storage capacity"),
                           ("size", "smallest storage meeting a variance target")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--step", type=float, help="capacity step, MWh")
        sp.add_argument("--max", dest="max_capacity", type=float, help="largest total capacity, MWh")
        sp.add_argument("--node", help="storage node for single-node sizing")
        sp.add_argument("--mode", choices=tuple(STORAGE_MODES), help="override every storage firm's mode")
        sp.add_argument("--threads", type=int, default=1, help="concurrent sweep evaluations")
        if name == "size":
            sp.add_argument("--allocation", choices=("single-node", "uniform", "coordinate-descent"))
            target = sp.add_mutually_exclusive_group(required=True)
            target.add_argument("--sigma0", type=float, help="variance cap, ($/MWh)^2")
            target.add_argument("--reduction", type=float, help="percent cut of zero-storage max variance")

    report = sub.add_parser("report", help="recompute summary metrics from a result directory")
    report.add_argument("result_dir")
    return p


def _config(inst, args):
    return inst.solver_config(tol_kkt=args.tol_kkt, max_iters=args.max_iters, multistart=args.multistart,
                              damping=args.damping, seed=args.seed)


def _plan(inst, args) -> SweepPlan:
    d = inst.sweep
    step = args.step if args.step is not None else d.get("step")
    cap = args.max_capacity if args.max_capacity is not None else d.get("max_capacity")
    if step is None or cap is None:
        raise ModelError("no --step/--max given and the instance has no sweep defaults", "sweep")
    allocation = getattr(args, "allocation", None) or d.get("allocation", "single-node")
    return SweepPlan(step, cap, allocation, args.node or d.get("node"))


def _print_summary(network, summary) -> None:
    print(f"{'node':<10}{'peak':>12}{'average':>12}{'max var':>14}{'sqrt var':>12}")
    for i, n in enumerate(network.nodes):
        print(f"{n:<10}{summary.peak[i]:>12.3f}{summary.daily_average[i]:>12.3f}"
              f"{summary.max_variance[i]:>14.3f}{summary.sqrt_volatility[i]:>12.3f}")


def _solve(inst, args) -> int:
    from .market import summary_metrics

    config = _config(inst, args)
    net = inst.network
    result = solve_equilibrium(net, config)
    print(f"converged={result.converged} sweeps={result.iterations} kkt={result.kkt_residual:.3e}")
    _print_summary(net, summary_metrics(result.prices, net.scenarios, net.horizon))
    if args.out:
        emit_results(ResultBundle(net, config, "solve", equilibrium=result), args.out)
    return EXIT_OK if result.converged else EXIT_NONCONVERGENCE


def _sweep(inst, args) -> int:
    config = _config(inst, args)
    plan = _plan(inst, args)
    mode = args.mode or inst.sweep.get("mode")
    curve = volatility_curve(inst.network, plan, config, mode, threads=args.threads, include_baseline=True)
    print(f"{'capacity':>10}{'sqrt var':>12}{'peak':>12}{'average':>12}")
    for c in curve:
        flag = "" if c.converged else "  (not converged)"
        print(f"{c.capacity:>10.1f}{c.sqrt_volatility:>12.3f}{c.peak_price:>12.3f}{c.daily_average:>12.3f}{flag}")
    if args.out:
        net = inst.network if mode is None else inst.network.with_storage_mode(STORAGE_MODES[mode])
        emit_results(ResultBundle(net, config, "sweep", curve=curve, metadata={"storage_mode": mode}), args.out)
    return EXIT_OK if all(c.converged for c in curve) else EXIT_NONCONVERGENCE


def _size(inst, args) -> int:
    config = _config(inst, args)
    plan = _plan(inst, args)
    target = VolatilityTarget(args.sigma0, args.reduction)
    net = inst.network
    mode = args.mode or inst.sweep.get("mode")
    if mode is not None:
        net = net.with_storage_mode(STORAGE_MODES[mode])
    res = minimal_storage_capacity(net, target, plan, config, threads=args.threads)
    caps = ", ".join(f"{k}={v:g}" for k, v in res.capacities.items())
    print(f"feasible={res.feasible} total={res.total:g} MWh ({caps}) sigma0^2={res.sigma0_sq:.6g}")
    if res.message:
        print(res.message)
    if args.out:
        final = next((p.result for p in reversed(res.trace) if p.converged and p.capacities == res.capacities), None)
        emit_results(ResultBundle(net, config, "size", equilibrium=final, sizing=res), args.out)
    if res.halted:
        return EXIT_NONCONVERGENCE
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def _report(args) -> int:
    audit = audit_results(args.result_dir)
    _print_summary(audit.network, audit.summary)
    print(f"price consistency {audit.price_error:.3e}, summary consistency {audit.summary_error:.3e}")
    return EXIT_OK if audit.consistent() else EXIT_VALIDATION


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return _report(args)
        inst = load_instance(args.instance)
        return {"solve": _solve, "sweep": _sweep, "size": _size}[args.command](inst, args)
    except InstanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, SizingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
