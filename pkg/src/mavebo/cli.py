"""Command-line entry point: ``mavebo-bench run|describe|selftest``."""

import argparse
import sys

import numpy as np

from .bench import ALGORITHMS, FUNCTIONS, ExperimentConfig, make_embedded_function, run_experiment
from .gp import MATERN, SE
from .optimizer import BudgetSplit


def _parse_seeds(text):
    """Comma-separated seeds; ``a:b`` expands to ``range(a, b)``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            lo, hi = part.split(":", 1)
            seeds.extend(range(int(lo), int(hi)))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("empty seed list")
    return seeds


def build_parser():
    parser = argparse.ArgumentParser(prog="mavebo-bench",
                                     description="MAVE-BO benchmark runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment over several seeds")
    run.add_argument("--func", choices=FUNCTIONS, default="quadratic-bowl")
    run.add_argument("--dim", type=int, default=20, help="ambient dimension D")
    run.add_argument("--effective-dim", type=int, default=None,
                     help="effective dimension of the quadratic bowl (1 or 2)")
    run.add_argument("--algo", choices=ALGORITHMS, default="smave")
    run.add_argument("--budget", type=int, default=100, help="total evaluations N")
    run.add_argument("--n0", type=int, default=None,
                     help="initial uniform evaluations N0 (default 0.6 N)")
    run.add_argument("--seeds", default="0:20", help="e.g. '7', '0,3,5' or '0:20'")
    run.add_argument("--out", required=True, help="output file")
    run.add_argument("--format", choices=("csv", "json"), default=None,
                     help="defaults to the output file extension, else csv")
    run.add_argument("--kernel", choices=(SE, MATERN), default=SE)
    run.add_argument("--nu", type=float, default=2.5, choices=(0.5, 1.5, 2.5))
    run.add_argument("--edr-dim", type=int, default=None,
                     help="number of estimated directions d (default d_e)")
    run.add_argument("--domain", choices=("ball", "box"), default="ball")

    desc = sub.add_parser("describe", help="print D, d_e and f_max of a benchmark")
    desc.add_argument("--func", choices=FUNCTIONS, required=True)
    desc.add_argument("--dim", type=int, default=20)
    desc.add_argument("--seed", type=int, default=0)
    desc.add_argument("--domain", choices=("ball", "box"), default="ball")
    desc.add_argument("--effective-dim", type=int, default=None)

    sub.add_parser("selftest", help="run a quick invariant suite")
    return parser


def _cmd_run(args, parser):
    if args.dim < 1:
        parser.error("argument --dim: must be a positive integer")
    n0 = args.n0 if args.n0 is not None else max(3, int(round(0.6 * args.budget)))
    try:
        budget = BudgetSplit(args.budget, n0)
    except ValueError as exc:
        parser.error(f"argument --n0/--budget: {exc}")
    try:
        seeds = _parse_seeds(args.seeds)
    except ValueError:
        parser.error(f"argument --seeds: invalid seed list {args.seeds!r}")
    fmt = args.format or ("json" if args.out.endswith(".json") else "csv")
    try:
        fn = make_embedded_function(args.func, args.dim, seeds[0], args.domain,
                                    args.effective_dim)
    except ValueError as exc:
        parser.error(f"argument --dim/--effective-dim: {exc}")
    if args.edr_dim is not None and not 1 <= args.edr_dim <= args.dim:
        parser.error("argument --edr-dim: must lie in [1, --dim]")
    config = ExperimentConfig(func=args.func, D=args.dim, algorithm=args.algo, seeds=seeds,
                              budget=budget, out=args.out, fmt=fmt, d_e=fn.d_e,
                              edr_dim=args.edr_dim, kernel=args.kernel, nu=args.nu,
                              domain_kind=args.domain)
    try:
        summary = run_experiment(config)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{args.algo} on {args.func} (D={args.dim}, N={budget.N}, N0={budget.N0}, "
          f"{len(seeds)} seeds): median final regret {summary['median']:.6g} "
          f"[IQR {summary['q25']:.6g}, {summary['q75']:.6g}] -> {args.out}")
    return 0


def _cmd_describe(args, parser):
    try:
        fn = make_embedded_function(args.func, args.dim, args.seed, args.domain,
                                    args.effective_dim)
    except ValueError as exc:
        parser.error(f"argument --dim/--effective-dim: {exc}")
    print(f"name={fn.name} D={fn.D} d_e={fn.d_e} domain={args.domain} f_max={fn.f_max!r}")
    return 0


def _selftest_checks():
    from .acquisition import h_func
    from .geometry import (BoxDomain, alternating_projection, det_lower_bound_check,
                           random_orthonormal, subspace_distance, subspace_distance_svd)
    from .gp import KernelSpec, fit_gp

    rng = np.random.default_rng(0)

    def frames():
        B = random_orthonormal(rng, 8, 3)
        B_hat = np.linalg.qr(B + 0.1 * rng.standard_normal((8, 3)))[0]
        return B, B_hat

    def orthonormal():
        B = random_orthonormal(rng, 12, 4)
        return np.linalg.norm(B.T @ B - np.eye(4)) < 1e-10

    def distance_formulas():
        return all(abs(subspace_distance(*p) - subspace_distance_svd(*p)) < 1e-10
                   for p in (frames() for _ in range(20)))

    def det_bound():
        return all(det_lower_bound_check(*frames())[2] for _ in range(20))

    def h_identity():
        x = np.linspace(-5, 5, 101)
        return np.max(np.abs(h_func(x) - x - h_func(-x))) < 1e-12

    def gp_interpolates():
        Z = rng.uniform(-1, 1, (15, 2))
        Y = np.sin(3 * Z[:, 0]) + Z[:, 1]
        model = fit_gp(KernelSpec("se", 1.0, (0.5, 0.5)), Z, Y, nugget=1e-10)
        mean, var = model.predict(Z)
        return np.max(np.abs(mean - Y)) < 1e-5 and np.max(np.sqrt(var)) < 1e-4

    def projection():
        box = BoxDomain.cube(20)
        B = random_orthonormal(rng, 20, 2)
        z = B.T @ rng.uniform(-0.9, 0.9, 20)
        res = alternating_projection(z, B, box)
        return res.converged and box.contains(res.point, atol=1e-12)

    return [("orthonormal frames", orthonormal), ("subspace distance formulas", distance_formulas),
            ("determinant lower bound", det_bound), ("h(x) = x + h(-x)", h_identity),
            ("GP interpolation", gp_interpolates), ("alternating projection", projection)]


def _cmd_selftest():
    failed = 0
    for name, check in _selftest_checks():
        try:
            ok = bool(check())
        except Exception as exc:  # report and keep going
            ok = False
            name = f"{name} ({exc})"
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 1 if failed else 0


def cli_main(argv=None):
    """Run the CLI and return its exit code (2 for usage errors)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args, parser)
        if args.command == "describe":
            return _cmd_describe(args, parser)
        return _cmd_selftest()
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
