"""Command line entry point: simulate, verify, she, compare, probe-kernels.

Exit codes: 0 when every assertion passes, 1 on a verification failure,
2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from hsep import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _eps_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty epsilon list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    from hsep.suites import SUITES

    parser = argparse.ArgumentParser(prog="hsep", description="Higher-spin exclusion process experiments.")
    parser.add_argument("--version", action="version", version=f"hsep {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, config_required: bool):
        sp.add_argument("--config", required=config_required, help="key = value parameter file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--eps", type=_eps_list, default=None, help="epsilon or comma-separated list")
        sp.add_argument("--replicas", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory (or .json file for reports)")

    common(sub.add_parser("simulate", help="simulate ensembles and write field statistics"), True)
    sp = sub.add_parser("verify", help="run verification suites")
    common(sp, False)
    sp.add_argument("--suite", action="append", choices=sorted(SUITES), default=None,
                    help="suite name (repeatable); all suites when omitted")
    common(sub.add_parser("she", help="solve the reference stochastic heat equation"), True)
    common(sub.add_parser("compare", help="compare particle one-point statistics with the SHE"), True)
    common(sub.add_parser("probe-kernels", help="heat-kernel scaling probes"), False)
    return parser


def _load_spec(args, **extra):
    from hsep.harness import spec_from_config, spec_from_mapping

    overrides = {"seed": args.seed, "replicas": args.replicas, "out": args.out,
                 "epsilons": args.eps, **extra}
    if args.config is None:
        return spec_from_mapping({}, **overrides)
    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    return spec_from_config(args.config, **overrides)


def _emit(report: dict, out: str | None, name: str) -> None:
    from hsep.verify import _json_default

    text = json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if path.suffix != ".json":
        path.mkdir(parents=True, exist_ok=True)
        path = path / f"{name}.json"
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(f"wrote {path}", file=sys.stderr)


def cmd_simulate(args) -> int:
    from hsep.harness import run_experiment

    spec = _load_spec(args)
    if spec.out is None:
        raise UsageError("simulate needs --out (or out = ... in the config)")
    bundle = run_experiment(spec)
    for f in bundle.files:
        print(f)
    return EXIT_OK


def cmd_verify(args) -> int:
    from hsep.suites import SUITES

    spec = _load_spec(args) if args.config else None
    names = args.suite or (list(spec.suites) if spec and spec.suites else list(SUITES))
    seed = args.seed if args.seed is not None else (spec.seed if spec else 0)
    results = {}
    for name in names:
        rep = SUITES[name](seed=seed, epsilons=args.eps, replicas=args.replicas)
        results[name] = rep
        print(f"{name}: {'PASS' if rep['passed'] else 'FAIL'} ({rep['runtime_s']:.1f} s)", file=sys.stderr)
    report = {"version": __version__, "seed": seed, "suites": results,
              "passed": all(r["passed"] for r in results.values())}
    _emit(report, args.out, "verify" if len(names) != 1 else f"suite_{names[0]}")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_she(args) -> int:
    from hsep.harness import header_lines
    from hsep.she import SHEGrid, one_point_stats, solve_she

    spec = _load_spec(args)
    ic = "delta" if spec.ic == "step" else "brownian"
    T = max(spec.taus)
    dx = min(spec.she_dx)
    n = int(np.ceil(T / (dx * dx / 2) - 1e-9)) or 1
    grid = SHEGrid(dx, T / n if T > 0 else dx * dx / 2, spec.she_half_width, seed=spec.seed,
                   boundary="dirichlet" if ic == "delta" else "periodic")
    if any(abs(t / grid.dt - round(t / grid.dt)) > 1e-6 for t in spec.taus):
        raise UsageError("every tau must be a multiple of the SHE time step")
    solve_she(ic, T, grid, replicas=args.replicas or spec.she_paths, taus=spec.taus, kappa0=spec.kappa0)
    summary = {"version": __version__, "params": spec.to_dict(), "ic": ic, "dx": dx, "dt": grid.dt,
               "one_point": []}
    for tau in spec.taus:
        if tau == 0 and ic == "delta":
            continue
        for r in spec.rs:
            st = one_point_stats(np.log(grid.value_at(tau, r)))
            summary["one_point"].append({"tau": tau, "r": r, **st})
    if spec.out:
        out = Path(spec.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "she_replica0.csv").write_text(grid.dump_csv(0, header=" | ".join(header_lines(spec, spec.params))))
        _emit(summary, str(out / "she_summary.json"), "she_summary")
    else:
        _emit(summary, None, "she_summary")
    return EXIT_OK


def cmd_compare(args) -> int:
    from hsep.harness import run_experiment

    spec = _load_spec(args, compare=True)
    bundle = run_experiment(spec, write=spec.out is not None)
    if spec.out is None:
        _emit({"comparisons": bundle.comparisons, "passed": bundle.passed}, None, "compare")
    return EXIT_OK if bundle.passed else EXIT_FAIL


def cmd_probe_kernels(args) -> int:
    from hsep.suites import kernels

    spec = _load_spec(args) if args.config else None
    eps = args.eps or (spec.epsilons if spec and args.config else None)
    rep = kernels(seed=args.seed or 0, epsilons=eps)
    _emit(rep, args.out, "probe_kernels")
    return EXIT_OK if rep["passed"] else EXIT_FAIL


COMMANDS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "she": cmd_she,
    "compare": cmd_compare,
    "probe-kernels": cmd_probe_kernels,
}


def main(argv=None) -> int:
    from hsep.harness import SpecError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if args.replicas is not None and args.replicas < 1:
        parser.print_usage(sys.stderr)
        print(f"hsep: error: --replicas must be >= 1, got {args.replicas}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, SpecError) as exc:
        parser.print_usage(sys.stderr)
        print(f"hsep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
