"""Command-line front end: generate | edmd | sweep | test | cluster | oracle-check.

Every artifact embeds a manifest with the tool version, the exact command
line, the RNG algorithm and seed (when randomness was used), the resolved
covariance kernel, and a SHA-256 digest of the input file.  All JSON is
emitted with sorted keys so identical commands produce bit-identical
output; only ``generate`` manifests carry a wall-clock timestamp.

Exit codes: 0 success, 1 check failure, 2 usage error, 3 numeric/resource
error.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .charmatrix import edmd_matrix, eigensystem, gram_matrices
from .errors import SpecguardError, UsageError
from .generators import (
    RNG_ALGORITHM,
    Lorenz63Spec,
    gen_expanding_map,
    gen_lorenz63,
    gen_var,
    var_benchmark_7d,
)
from .ingest import (
    DictionarySpec,
    SnapshotSeries,
    delay_embed,
    evaluate_dictionary,
    load_snapshots,
    write_snapshots,
)
from .oracle import run_oracle_checks
from .pseudospec import GridSpec, PowerIterSettings, p_hat, sweep
from .stats import cluster_eigenvalues, eig_test, spectrum_test
from .variance import KernelSpec, default_mu_list, estimate_tau, window_length

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

#: delay-embedding layout used for Lorenz-63 trajectories.
_LORENZ_DICT = dict(max_degree=3, n_delays=10, state_dim=3)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(
    kind: str,
    seed: int | None = None,
    kernel: KernelSpec | None = None,
    input_path: str | None = None,
    warnings: list[str] | None = None,
    timestamp: bool = False,
    extra: dict | None = None,
) -> dict:
    man = {
        "schema": f"specguard/v1/{kind}",
        "tool_version": __version__,
        "command": " ".join(sys.argv),
        "rng": {
            "algorithm": RNG_ALGORITHM if seed is not None else None,
            "seed": seed,
        },
        "kernel": kernel.to_json_dict() if kernel is not None else None,
        "input": (
            {"path": input_path, "sha256": _sha256(input_path)}
            if input_path is not None
            else None
        ),
        "warnings": warnings or [],
    }
    if timestamp:
        man["created"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    if extra:
        man.update(extra)
    return man


def _write_json(obj: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _parse_complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", ""))
    except ValueError:
        raise UsageError(f"cannot parse complex number from {text!r}") from None


def _load_series(args: argparse.Namespace) -> SnapshotSeries:
    fmt = getattr(args, "format", None)
    if fmt is None:
        fmt = "json" if args.data.endswith(".json") else "csv"
    return load_snapshots(args.data, format=fmt)


# ---------------------------------------------------------------------------
# Kernel flag resolution (shared by sweep/test/cluster)
# ---------------------------------------------------------------------------


def _add_kernel_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument(
        "--iid", action="store_true", help="independent snapshot pairs (no window)"
    )
    group.add_argument(
        "--LM", type=int, metavar="L", help="window half-width L_M, directly"
    )
    group.add_argument(
        "--tau",
        metavar="T",
        help="correlation time for the plug-in window ('auto' to estimate)",
    )
    parser.add_argument(
        "--mu",
        metavar="SPEC",
        help=(
            "slow modes to deflate: 'auto:K' picks the top K non-unit EDMD "
            "eigenvalues; otherwise a comma-separated complex list"
        ),
    )


def _resolve_kernel(
    args: argparse.Namespace, series: SnapshotSeries
) -> tuple[KernelSpec, list[str]]:
    warnings: list[str] = []
    if args.iid:
        if args.mu:
            raise UsageError("--mu is meaningless with --iid")
        if series.sampling_kind == "trajectory":
            warnings.append(
                "iid kernel requested on trajectory-kind data; serial "
                "correlation will be ignored"
            )
        return KernelSpec.iid(), warnings

    mu_list: tuple[complex, ...] = ()
    if args.mu:
        if args.mu.startswith("auto:"):
            try:
                top_k = int(args.mu.split(":", 1)[1])
            except ValueError:
                raise UsageError(f"bad --mu value {args.mu!r}") from None
            gram = gram_matrices(series)
            k_hat, _ = edmd_matrix(gram, floor=getattr(args, "rcond_floor", None))
            eigs = [m.eigenvalue for m in eigensystem(k_hat)]
            mu_list, notes = default_mu_list(eigs, top_k)
            warnings.extend(notes)
        else:
            mu_list = tuple(_parse_complex(tok) for tok in args.mu.split(","))

    if args.LM is not None:
        if args.LM < 0:
            raise UsageError(f"--LM must be >= 0, got {args.LM}")
        l_window = args.LM
    else:
        if args.tau == "auto":
            tau = estimate_tau(series)
            warnings.append(f"estimated correlation time tau={tau:.4g}")
        else:
            try:
                tau = float(args.tau)
            except ValueError:
                raise UsageError(f"bad --tau value {args.tau!r}") from None
        l_window = window_length(tau, series.M)
    if series.sampling_kind == "iid":
        warnings.append(
            "windowed kernel on iid-kind data; the iid kernel would be tighter"
        )
    return KernelSpec.windowed(l_window, mu_list), warnings


def _add_grid_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--re-min", type=float, required=True)
    parser.add_argument("--re-max", type=float, required=True)
    parser.add_argument("--n-re", type=int, required=True)
    parser.add_argument("--im-min", type=float, required=True)
    parser.add_argument("--im-max", type=float, required=True)
    parser.add_argument("--n-im", type=int, required=True)


def _default_threads() -> int:
    env = os.environ.get("SPECGUARD_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    if args.system == "var":
        spec = var_benchmark_7d(seed=args.seed)
        x, y = gen_var(spec, args.M)
        series = evaluate_dictionary(x, y, DictionarySpec.identity(7), "iid")
        extra = {"system": "var", "preset": args.preset}
    elif args.system == "map1d":
        x, y = gen_expanding_map(args.M, mode=args.mode, seed=args.seed)
        series = evaluate_dictionary(
            x, y, DictionarySpec.trig(args.N), sampling_kind=args.mode
        )
        extra = {"system": "map1d", "mode": args.mode, "n_obs": args.N}
    else:  # lorenz63
        lorenz = Lorenz63Spec(seed=args.seed)
        dict_spec = DictionarySpec.monomial_delay(**_LORENZ_DICT)
        raw = gen_lorenz63(lorenz, args.M + dict_spec.n_delays)
        series = delay_embed(raw, dict_spec, step=1, dt=lorenz.dt_sample)
        extra = {"system": "lorenz63", "dt_sample": lorenz.dt_sample}

    out = args.out or f"{args.system}_M{args.M}_seed{args.seed}.{args.format}"
    write_snapshots(series, out, format=args.format)
    extra.update({"m_samples": series.M, "n_obs": series.N})
    man = _manifest("manifest", seed=args.seed, timestamp=True, extra=extra)
    man["output"] = {"path": out, "sha256": _sha256(out)}
    _write_json(man, out + ".manifest.json")
    print(f"wrote {series.M} x {series.N} snapshot pairs to {out}")
    return EXIT_OK


def cmd_edmd(args: argparse.Namespace) -> int:
    series = _load_series(args)
    gram = gram_matrices(series)
    k_hat, rcond = edmd_matrix(gram, floor=args.rcond_floor)
    modes = eigensystem(k_hat)
    artifact = {
        "schema": "specguard/v1/edmd",
        "manifest": _manifest("edmd", input_path=args.data),
        "rcond": rcond,
        "m_samples": series.M,
        "eigenvalues": [
            {
                "index": i,
                "re": m.eigenvalue.real,
                "im": m.eigenvalue.imag,
                "residual": m.residual,
            }
            for i, m in enumerate(modes)
        ],
    }
    _write_json(artifact, args.out)
    print(f"EDMD fit: N={series.N}, rcond={rcond:.3e}; wrote {args.out}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    series = _load_series(args)
    kernel, warnings = _resolve_kernel(args, series)
    settings = PowerIterSettings(rel_tol=args.tol, max_iters=args.max_iters)
    grid = GridSpec(args.re_min, args.re_max, args.n_re, args.im_min, args.im_max, args.n_im)
    result = sweep(grid, series, kernel, settings, threads=args.threads, floor=args.rcond_floor)
    artifact = {
        "schema": "specguard/v1/sweep",
        "manifest": _manifest(
            "sweep", kernel=kernel, input_path=args.data, warnings=warnings
        ),
        "grid": result.to_json_dict(log_time=args.log_time),
    }
    _write_json(artifact, args.out)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(result.to_csv_text(log_time=args.log_time))
    n_conv = int(np.sum(result.status == "converged"))
    print(
        f"swept {grid.n_re}x{grid.n_im} grid: {n_conv}/{grid.n_re * grid.n_im} "
        f"converged; wrote {args.out}"
    )
    return EXIT_OK


def cmd_test(args: argparse.Namespace) -> int:
    if not args.eigs and not args.point:
        raise UsageError("nothing to test: pass --eigs and/or --lambda")
    series = _load_series(args)
    kernel, warnings = _resolve_kernel(args, series)
    settings = PowerIterSettings(rel_tol=args.tol, max_iters=args.max_iters)
    alphas = tuple(args.alpha)

    rows = []
    if args.eigs:
        report = spectrum_test(series, kernel, settings, alphas=alphas, floor=args.rcond_floor)
        body = report.to_json_dict()
        for row in body["eigenvalues"]:
            row["source"] = "eigs"
            rows.append(row)
    for text in args.point or []:
        lam = _parse_complex(text)
        est = p_hat(lam, series, kernel, settings, floor=args.rcond_floor)
        res = eig_test(lam, est, series.M, alphas=alphas)
        rows.append(
            {
                "index": None,
                "lambda": {"re": lam.real, "im": lam.imag},
                "residual": None,
                "m_p_hat": res.m_p_hat,
                "p_value": res.p_value,
                "reject": {f"{a:g}": bool(r) for a, r in res.reject_at},
                "status": res.status,
                "testable": res.testable,
                "conjectured_bound": res.conjectured_bound,
                "cluster_id": None,
                "source": "user",
            }
        )
    artifact = {
        "schema": "specguard/v1/report",
        "manifest": _manifest(
            "report", kernel=kernel, input_path=args.data, warnings=warnings
        ),
        "m_samples": series.M,
        "alphas": list(alphas),
        "results": rows,
    }
    _write_json(artifact, args.out)
    n_rej = sum(1 for r in rows if r["reject"].get(f"{alphas[0]:g}"))
    print(f"tested {len(rows)} points; {n_rej} rejected at alpha={alphas[0]}")
    return EXIT_OK


def cmd_cluster(args: argparse.Namespace) -> int:
    series = _load_series(args)
    kernel, warnings = _resolve_kernel(args, series)
    settings = PowerIterSettings(rel_tol=args.tol, max_iters=args.max_iters)
    grid = GridSpec(args.re_min, args.re_max, args.n_re, args.im_min, args.im_max, args.n_im)
    result = sweep(grid, series, kernel, settings, threads=args.threads, floor=args.rcond_floor)
    gram = gram_matrices(series)
    k_hat, _ = edmd_matrix(gram, floor=args.rcond_floor)
    eigs = [m.eigenvalue for m in eigensystem(k_hat)]
    report = cluster_eigenvalues(result, eigs, args.level, series.M)
    artifact = {
        "schema": "specguard/v1/clusters",
        "manifest": _manifest(
            "clusters", kernel=kernel, input_path=args.data, warnings=warnings
        ),
        "eigenvalues": [{"re": z.real, "im": z.imag} for z in eigs],
        "report": report.to_json_dict(),
        "grid": result.to_json_dict(),
    }
    _write_json(artifact, args.out)
    sizes = [len(c.eig_indices) for c in report.clusters]
    print(
        f"{len(report.clusters)} clusters at level {args.level:g} "
        f"(eigenvalue counts {sizes}); {len(report.unresolved)} unresolved"
    )
    return EXIT_OK


def cmd_oracle_check(args: argparse.Namespace) -> int:
    results = run_oracle_checks(perturb=args.perturb, seeds=args.seeds)
    for res in results:
        print(f"[{'PASS' if res.passed else 'FAIL'}] {res.name}: {res.detail}")
    if args.out:
        artifact = {
            "schema": "specguard/v1/oracle-check",
            "manifest": _manifest("oracle-check"),
            "perturb": args.perturb,
            "results": [
                {"name": r.name, "passed": r.passed, "detail": r.detail}
                for r in results
            ],
        }
        _write_json(artifact, args.out)
    if all(r.passed for r in results):
        print(f"oracle-check: {len(results)} checks passed")
        return EXIT_OK
    n_bad = sum(1 for r in results if not r.passed)
    print(f"oracle-check: {n_bad}/{len(results)} checks FAILED", file=sys.stderr)
    return EXIT_CHECK_FAILURE


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specguard",
        description="Certified pseudospectrum estimation for data-driven spectral analysis.",
    )
    parser.add_argument("--version", action="version", version=f"specguard {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="sample a built-in system to a snapshot file")
    p_gen.add_argument("--system", choices=("var", "map1d", "lorenz63"), required=True)
    p_gen.add_argument(
        "--preset",
        choices=("benchmark7", "paper"),
        default="benchmark7",
        help="named parameter set for --system var",
    )
    p_gen.add_argument("--mode", choices=("iid", "trajectory"), default="iid",
                       help="sampling mode for map1d")
    p_gen.add_argument("--N", type=int, default=10,
                       help="trig dictionary size for map1d (even)")
    p_gen.add_argument("--M", type=int, required=True, help="number of snapshot pairs")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--format", choices=("csv", "json"), default="csv")
    p_gen.add_argument("--out", help="output path (default derived from flags)")
    p_gen.set_defaults(func=cmd_generate)

    p_edmd = sub.add_parser("edmd", help="fit the EDMD matrix and report its spectrum")
    p_edmd.add_argument("--data", required=True)
    p_edmd.add_argument("--format", choices=("csv", "json"))
    p_edmd.add_argument("--rcond-floor", type=float, default=None,
                        help="override the rcond singularity floor (default 1e-10*N); "
                             "large delay dictionaries may need a lower value")
    p_edmd.add_argument("--out", required=True)
    p_edmd.set_defaults(func=cmd_edmd)

    p_sweep = sub.add_parser("sweep", help="bracket the pseudospectrum over a grid")
    p_sweep.add_argument("--data", required=True)
    p_sweep.add_argument("--format", choices=("csv", "json"))
    _add_grid_flags(p_sweep)
    _add_kernel_flags(p_sweep)
    p_sweep.add_argument("--tol", type=float, default=0.1, help="bracket relative width")
    p_sweep.add_argument("--max-iters", type=int, default=200)
    p_sweep.add_argument("--threads", type=int, default=_default_threads())
    p_sweep.add_argument("--log-time", type=float, default=None, metavar="DT",
                         help="also report log(lambda)/DT coordinates")
    p_sweep.add_argument("--rcond-floor", type=float, default=None,
                         help="override the rcond singularity floor (default 1e-10*N); "
                             "large delay dictionaries may need a lower value")
    p_sweep.add_argument("--out", required=True, help="JSON output path")
    p_sweep.add_argument("--csv", help="optional CSV output path")
    p_sweep.set_defaults(func=cmd_sweep)

    p_test = sub.add_parser("test", help="eigenvalue tests at chosen spectral points")
    p_test.add_argument("--data", required=True)
    p_test.add_argument("--format", choices=("csv", "json"))
    p_test.add_argument("--eigs", action="store_true",
                        help="test at every EDMD eigenvalue")
    p_test.add_argument("--lambda", dest="point", action="append", metavar="Z",
                        help="complex point to test (repeatable)")
    _add_kernel_flags(p_test)
    p_test.add_argument("--tol", type=float, default=0.1)
    p_test.add_argument("--max-iters", type=int, default=200)
    p_test.add_argument("--alpha", type=float, action="append",
                        default=None, help="test levels (repeatable)")
    p_test.add_argument("--rcond-floor", type=float, default=None,
                        help="override the rcond singularity floor (default 1e-10*N); "
                             "large delay dictionaries may need a lower value")
    p_test.add_argument("--out", required=True)
    p_test.set_defaults(func=cmd_test)

    p_clus = sub.add_parser("cluster", help="group eigenvalues by bracket sublevel sets")
    p_clus.add_argument("--data", required=True)
    p_clus.add_argument("--format", choices=("csv", "json"))
    _add_grid_flags(p_clus)
    _add_kernel_flags(p_clus)
    p_clus.add_argument("--level", type=float, required=True,
                        help="threshold on M * lower")
    p_clus.add_argument("--tol", type=float, default=0.1)
    p_clus.add_argument("--max-iters", type=int, default=200)
    p_clus.add_argument("--threads", type=int, default=_default_threads())
    p_clus.add_argument("--rcond-floor", type=float, default=None,
                        help="override the rcond singularity floor (default 1e-10*N); "
                             "large delay dictionaries may need a lower value")
    p_clus.add_argument("--out", required=True)
    p_clus.set_defaults(func=cmd_cluster)

    p_orc = sub.add_parser("oracle-check", help="run the internal consistency suite")
    p_orc.add_argument("--perturb", type=float, default=0.0,
                       help="negative control: perturb references by this factor")
    p_orc.add_argument("--seeds", type=int, default=1)
    p_orc.add_argument("--out", help="optional JSON report path")
    p_orc.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "alpha", None) is not None and not args.alpha:
        args.alpha = None
    if hasattr(args, "alpha") and args.alpha is None:
        args.alpha = [0.05, 0.01]
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpecguardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
