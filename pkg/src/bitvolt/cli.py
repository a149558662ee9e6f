"""Command-line frontend.

Subcommands: ``simulate`` (run a scenario, optionally certify), ``analyze``
(recheck certificates from a trace file), ``gen-net`` (emit a feeder file),
``powerflow`` (one-shot plant evaluation), ``validate`` (run the spectral
and projection property kernels on an instance).

Exit codes: 0 success, 1 usage error, 2 certification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import analysis, kernels
from .control import ControllerParams, Variant
from .feeder import FeederFormatError, emit_feeder, parse_feeder
from .generator import generate_feeder, parse_generator_spec
from .grid import build_matrices
from .plant import (DistFlowNonConvergence, DistFlowPlant, LinearPlant,
                    distflow_residual, distflow_solution, evaluate_voltage)
from .sim import (DynamicSchedule, Scenario, StaticSchedule, load_csv,
                  load_jsonl, run_dynamic, run_static, summarize, write_csv,
                  write_jsonl)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CERT = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _add_instance_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--network", metavar="PATH", help="feeder file to load")
    g.add_argument("--gen", metavar="SPEC",
                   help="generator spec, e.g. 'chain,N=3,seed=7,margin=0.05'")
    p.add_argument("--seed", type=int, default=None,
                   help="seed override for generation and dynamic draws")


def _load_instance(args):
    if bool(args.network) == bool(args.gen):
        raise _UsageError("exactly one of --network or --gen is required")
    if args.network:
        return parse_feeder(args.network)
    spec = parse_generator_spec(args.gen)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    return generate_feeder(spec)


def _parse_dynamic(text: str, seed: int) -> DynamicSchedule:
    kw = {"seed": seed}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise _UsageError(f"malformed --dynamic item {item!r}")
        key, val = item.split("=", 1)
        if key == "intervals":
            kw["intervals"] = int(val)
        elif key == "rounds":
            kw["rounds_per_interval"] = int(val)
        elif key == "range":
            lo, hi = (float(v) for v in val.split(":"))
            kw["scale_range"] = (lo, hi)
        else:
            raise _UsageError(f"unknown --dynamic key {key!r}")
    return DynamicSchedule(**kw)


def _resolve_params(args, model) -> ControllerParams:
    variant = Variant(args.controller)
    presets = [name for name, on in (("--paper-static", args.paper_static),
                                     ("--paper-small-alpha", args.paper_small_alpha),
                                     ("--theorem1-steps", args.theorem1_steps)) if on]
    if len(presets) > 1:
        raise _UsageError(f"{' and '.join(presets)} are mutually exclusive")
    explicit = args.alpha is not None or args.beta is not None
    if presets and explicit:
        raise _UsageError(f"{presets[0]} conflicts with explicit --alpha/--beta")

    rho = args.rho
    if args.paper_static:
        alpha, beta = 0.2, 1e-5
    elif args.paper_small_alpha:
        alpha, beta = 0.08, 1e-5
    elif args.theorem1_steps:
        if args.epsilon is None:
            raise _UsageError("--theorem1-steps requires --epsilon")
        target = rho if rho > 0.0 else args.epsilon
        pres = analysis.prescribe_steps(model, None, target)
        alpha, beta = pres.alpha, pres.beta
    else:
        alpha, beta = args.alpha, args.beta

    if variant is Variant.BASELINE:
        if alpha is not None or beta is not None:
            if args.gamma is None and alpha is not None:
                raise _UsageError("baseline uses --gamma, not --alpha/--beta")
        gamma = args.gamma if args.gamma is not None else 1.0 / model.L
        return ControllerParams(alpha=gamma, beta=gamma, rho=rho,
                                variant=variant, gamma=gamma)
    if args.gamma is not None:
        raise _UsageError(f"--gamma is incompatible with --controller {args.controller}")
    if alpha is None or beta is None:
        raise _UsageError("need --alpha and --beta (or a step preset)")
    return ControllerParams(alpha=alpha, beta=beta, rho=rho, variant=variant)


def cmd_simulate(args) -> int:
    net, cond = _load_instance(args)
    model = build_matrices(net)
    params = _resolve_params(args, model)
    plant = (DistFlowPlant(tolerance=args.distflow_tol,
                           max_sweeps=args.distflow_max_sweeps)
             if args.plant == "distflow" else LinearPlant())
    if args.certify and args.epsilon is None:
        raise _UsageError("--certify requires --epsilon")

    kind = (_parse_dynamic(args.dynamic, args.seed or 0)
            if args.dynamic else StaticSchedule(rounds=args.rounds))
    scenario = Scenario(
        kind=kind, params=params, plant=plant,
        stop_threshold=args.stop_threshold, epsilon=args.epsilon,
        record_stride=args.stride, certify=args.certify,
        per_link_bits=args.per_link_bits, global_scale=args.global_scale,
        cold_start=args.cold_start)

    steps_certified = True
    if args.epsilon is not None:
        cap_a, cap_b = 2.0 / model.L, analysis.step_size_caps(
            model, args.epsilon, params.alpha)[1]
        steps_certified = params.alpha < cap_a and params.beta < cap_b
        if args.certify and not steps_certified:
            print("warning: step sizes violate the descent conditions; "
                  "the per-round descent guarantee is not monitored")

    try:
        if args.dynamic:
            trace = run_dynamic(net, cond, scenario, model)
        else:
            trace = run_static(net, cond, scenario, model)
    except RuntimeError as exc:
        print(f"certification failure: {exc}", file=sys.stderr)
        return EXIT_CERT

    print(f"backend: {trace.backend}")
    print(summarize(trace, epsilon=args.epsilon).format())

    cert_failed = False
    if args.certify:
        rho = params.rho
        eps = args.epsilon
        z = trace.final_dual()
        fes_lin, merit = analysis.feasibility_from_dual(z, model, cond, rho)
        cert = analysis.Certificates(
            fes=fes_lin, V=merit,
            D=analysis.dual_objective(z, model, cond, rho),
            delta=analysis.descent_increment(params.alpha, params.beta, eps, model),
            iteration_bound=analysis.iteration_bound(model, cond, eps, rho),
            step_alpha=params.alpha, step_beta=params.beta,
            alpha_cap=2.0 / model.L,
            beta_cap=analysis.step_size_caps(model, eps, params.alpha)[1])
        print(cert.format_report())
        mon = trace.monitors
        checks = [
            ("merit dominates feasibility", mon.lemma5b_violations == 0),
            ("mirror consistency", mon.mirror_violations == 0),
        ]
        if mon.descent_monitor_active:
            checks.append(("per-round dual descent", mon.descent_violations == 0))
        if params.variant is Variant.VCLBP:
            checks.append(("injected setpoints inside capacity",
                           mon.max_inj_violation == 0.0))
        for name, ok in checks:
            print(f"  monitor {name}: {'ok' if ok else 'VIOLATED'}")
            cert_failed |= not ok
        if trace.failed:
            print(f"  plant failure at round {trace.fail_round}: {trace.fail_reason}")
            cert_failed = True

    if args.out:
        writer = write_jsonl if args.format == "jsonl" else write_csv
        writer(trace, args.out)
        print(f"trace written to {args.out} ({args.format})")
    return EXIT_CERT if cert_failed else EXIT_OK


def cmd_analyze(args) -> int:
    net, cond = _load_instance(args)
    model = build_matrices(net)
    rho = args.rho
    data = (load_jsonl if args.format == "jsonl" else load_csv)(args.trace)

    failures = []
    fes_err = 0.0
    v_err = 0.0
    d_err = 0.0
    lemma_bad = 0
    for r in range(data.rows):
        fes_err = max(fes_err, abs(analysis.feasibility(data.q[r], data.v[r], cond)
                                   - data.fes[r]))
        z = data.dual_at(r)
        v_err = max(v_err, abs(analysis.merit_V(z, model, cond, rho) - data.V[r]))
        d_err = max(d_err, abs(analysis.dual_objective(z, model, cond, rho)
                               - data.D[r]))
        fes_lin, merit = analysis.feasibility_from_dual(z, model, cond, rho)
        lemma_bad += fes_lin > merit
    # columns carry 12 significant digits
    tol = 1e-9 * max(1.0, float(np.max(np.abs(data.D))))
    checks = [
        ("fes column matches recomputation", fes_err <= tol, f"max err {fes_err:.3e}"),
        ("V column matches recomputation", v_err <= tol, f"max err {v_err:.3e}"),
        ("D column matches recomputation", d_err <= tol, f"max err {d_err:.3e}"),
        ("merit dominates feasibility at every row", lemma_bad == 0,
         f"{lemma_bad} violations"),
        ("round indices strictly increasing",
         bool(np.all(np.diff(data.t) > 0)), ""),
        ("bit ledger nondecreasing",
         bool(np.all(np.diff(data.bits) >= 0)), ""),
    ]
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f" ({detail})" if detail else ""))
        if not ok:
            failures.append(name)
    return EXIT_CERT if failures else EXIT_OK


def cmd_gen_net(args) -> int:
    spec = parse_generator_spec(args.gen)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    net, cond = generate_feeder(spec)
    text = emit_feeder(net, cond)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"feeder written to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_powerflow(args) -> int:
    net, cond = _load_instance(args)
    model = build_matrices(net)
    if args.q:
        q = np.asarray([float(v) for v in args.q.split(",")])
    else:
        q = np.zeros(net.bus_count)
    if args.plant == "distflow":
        kind = DistFlowPlant(tolerance=args.distflow_tol,
                             max_sweeps=args.distflow_max_sweeps)
        v_all, sp, sq = distflow_solution(net, cond, q, kind.tolerance,
                                          kind.max_sweeps)
        v = v_all[1:]
        resid = distflow_residual(net, cond, q, v_all, sp, sq)
    else:
        v = evaluate_voltage(LinearPlant(), net, model, cond, q)
        resid = None
    print("bus,v")
    for b in range(net.bus_count):
        print(f"{b + 1},{_fmt(v[b])}")
    if resid is not None:
        print(f"# residual={_fmt(resid)}")
    return EXIT_OK


def cmd_validate(args) -> int:
    net, cond = _load_instance(args)
    model = build_matrices(net)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    n = model.n_bus
    results = []

    ident = float(np.max(np.abs(model.A @ model.A_inv - np.eye(n))))
    results.append(("closed-form inverse solves A X = I (<= 1e-9)",
                    ident <= 1e-9, f"max err {ident:.3e}"))
    results.append(("A positive definite", bool(model.eig_A[0] > 0.0),
                    f"min eig {model.eig_A[0]:.3e}"))

    M = analysis.build_M(model)
    eig_m = np.linalg.eigvalsh(M)
    expected = np.sort(-2.0 * (model.eig_A + 1.0 / model.eig_A))
    nonzero = eig_m[:n]
    rel = float(np.max(np.abs(nonzero - expected) / np.abs(expected)))
    zeros = int(np.count_nonzero(np.abs(eig_m) < 1e-9))
    results.append(("gradient-map spectrum matches -2(eig + 1/eig) (<= 1e-6 rel)",
                    rel <= 1e-6, f"max rel err {rel:.3e}"))
    results.append(("gradient map has exactly 3N zero eigenvalues",
                    zeros == 3 * n, f"{zeros} of {3 * n}"))
    g0 = analysis.dual_gradient(np.zeros(4 * n), model, cond)
    aff = 0.0
    for _ in range(5):
        z = rng.uniform(0.0, 1.0, size=4 * n)
        aff = max(aff, float(np.max(np.abs(
            analysis.dual_gradient(z, model, cond) - (M @ z + g0)))))
    results.append(("dual gradient is affine in the duals (<= 1e-9)",
                    aff <= 1e-9, f"max err {aff:.3e}"))

    bad = 0
    for _ in range(args.samples):
        scale = 10.0 ** rng.uniform(-3, 1)
        z = rng.uniform(0.0, scale, size=4 * n)
        fes_lin, merit = analysis.feasibility_from_dual(z, model, cond)
        bad += fes_lin > merit
    results.append((f"merit dominates feasibility on {args.samples} dual samples",
                    bad == 0, f"{bad} violations"))

    k = args.samples
    scale = 10.0 ** rng.uniform(-3, 2, size=k)
    x = np.abs(rng.normal(size=k)) * scale
    z = rng.normal(size=k) * scale
    base = np.where(x + z >= 0.0, np.abs(z), x)
    viol = analysis.projection_identity_violations(
        x, z, rng.uniform(0.0, 1.0, size=k), rng.uniform(0.0, 1.0, size=k) * base,
        np.abs(rng.normal(size=k)) * scale)
    results.append((f"projection identities on {k} scalar samples",
                    viol == 0, f"{viol} violations"))

    failed = False
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name} ({detail})")
        failed |= not ok
    return EXIT_CERT if failed else EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="bitvolt",
                description="limited-communication volt/var control simulator")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a control scenario")
    _add_instance_args(sim)
    sim.add_argument("--controller", choices=["vclb", "vclbp", "baseline"],
                     default="vclb")
    sim.add_argument("--plant", choices=["linear", "distflow"], default="linear")
    sim.add_argument("--alpha", type=float)
    sim.add_argument("--beta", type=float)
    sim.add_argument("--gamma", type=float, help="baseline step size")
    sim.add_argument("--rho", type=float, default=0.0,
                     help="uniform box tightening (exact-solution mode)")
    sim.add_argument("--epsilon", type=float, help="target accuracy")
    sim.add_argument("--theorem1-steps", action="store_true",
                     help="use the certified step-size pair for --epsilon/--rho")
    sim.add_argument("--paper-static", action="store_true",
                     help="preset alpha=0.2 beta=1e-5 rho=0")
    sim.add_argument("--paper-small-alpha", action="store_true",
                     help="preset alpha=0.08 beta=1e-5 rho=0")
    sim.add_argument("--rounds", type=int, default=1000)
    sim.add_argument("--dynamic", metavar="SPEC",
                     help="dynamic schedule, e.g. 'intervals=8,rounds=500,range=0.75:1.25'")
    sim.add_argument("--global-scale", action="store_true",
                     help="one load scale per interval instead of per bus")
    sim.add_argument("--cold-start", action="store_true",
                     help="reset duals at every interval boundary")
    sim.add_argument("--stop-threshold", type=float, default=None,
                     help="stop once fes falls to this value")
    sim.add_argument("--stride", type=int, default=1,
                     help="record every k-th round (0 = final row only)")
    sim.add_argument("--per-link-bits", action="store_true",
                     help="count 2|N_i| bits per bus instead of broadcast 2")
    sim.add_argument("--certify", action="store_true",
                     help="monitor certificates; exit 2 on violation")
    sim.add_argument("--distflow-tol", type=float, default=1e-10)
    sim.add_argument("--distflow-max-sweeps", type=int, default=100)
    sim.add_argument("--out", metavar="PATH", help="trace output file")
    sim.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="recheck certificates from a trace")
    _add_instance_args(ana)
    ana.add_argument("--trace", required=True)
    ana.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    ana.add_argument("--rho", type=float, default=0.0)
    ana.set_defaults(func=cmd_analyze)

    gen = sub.add_parser("gen-net", help="emit a generated feeder file")
    gen.add_argument("--gen", metavar="SPEC", required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", metavar="PATH")
    gen.set_defaults(func=cmd_gen_net)

    pf = sub.add_parser("powerflow", help="one-shot plant evaluation")
    _add_instance_args(pf)
    pf.add_argument("--plant", choices=["linear", "distflow"], default="distflow")
    pf.add_argument("--q", metavar="LIST", default="",
                    help="comma-separated injections (default zeros)")
    pf.add_argument("--distflow-tol", type=float, default=1e-10)
    pf.add_argument("--distflow-max-sweeps", type=int, default=100)
    pf.set_defaults(func=cmd_powerflow)

    val = sub.add_parser("validate", help="run property kernels on an instance")
    _add_instance_args(val)
    val.add_argument("--samples", type=int, default=1000)
    val.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FeederFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DistFlowNonConvergence as exc:
        print(f"power flow failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
