"""Command-line harness: workload generation, pipeline runs, sweeps and traces."""

import argparse
import json
import logging
import sys
from collections.abc import Callable
from pathlib import Path

import polars as pl
from pydantic import ValidationError

from .attention import error_metrics, reference_attention, turbo_prefill_head
from .errors import ConfigError, ContractViolation
from .kv_cache import DEFAULT_BLOCK_SIZE, DEFAULT_BUFFER_SIZE
from .models import RunOptions, SoftmaxMode, WorkloadSpec
from .runner import CACHE_FILE, PLAN_FILE, decode_table, run_pipeline, select_plan
from .sas import DEFAULT_N_R, build_lut, exp_error_table, softmax_fidelity
from .selectors import SELECTOR_NAMES
from .sweep import SweepAxis, run_sweep
from .tensor_io import TensorFormatError, save_tensor
from .trace import TileTraceRecorder
from .workload import ManifestError, WorkloadStore, generate_workload, load_workload

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_VALIDATION = 2
EXIT_IO = 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"Expected comma-separated integers, got {text!r}"
        ) from None


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        print(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    print(f"Wrote {out}")


def _emit_table(table: pl.DataFrame, out: Path | None, fmt: str) -> None:
    text = table.write_csv() if fmt == "csv" else json.dumps(table.to_dicts(), indent=2)
    _emit(text, out)


def _run_options(args: argparse.Namespace) -> RunOptions:
    bits = 8 if args.no_q2 else args.bits
    return RunOptions(
        b_r=args.br,
        b_c=args.bc,
        n_b=args.nb,
        n_r=args.nr,
        causal=args.causal,
        softmax=SoftmaxMode(args.softmax),
        bits=bits,
        heads2bit=args.heads2bit,
        selector=args.selector,
        oracle_only=getattr(args, "oracle_only", False),
        steps=getattr(args, "steps", None),
    )


def cmd_gen(args: argparse.Namespace) -> int:
    """Generate a synthetic workload directory.

    Args:
        args: Parsed command-line arguments

    Returns:
        Exit code (0 for success)
    """
    spec = WorkloadSpec(
        seed=args.seed,
        n=args.n,
        d=args.d,
        heads=args.heads,
        sigma=args.sigma,
        outlier_heads=args.outlier_heads,
        outlier_channels_per_head=args.outlier_channels,
        outlier_magnitude=args.outlier_magnitude,
        decode_steps=args.decode_steps,
    )
    store = generate_workload(spec, args.out)
    size_kb = store.get_size() / 1024
    print(f"Workload written to {store.base_dir}")
    print(f"  Heads: {spec.heads}  Tokens: {spec.n}  Head dim: {spec.d}")
    print(f"  Outlier heads: {spec.outlier_heads or 'none'}")
    print(f"  Tensors: {len(store.list_tensors())} ({size_kb:.1f} KB)")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    """Run the pipeline on a workload and report errors and cache size.

    Returns:
        Exit code (0 for success)
    """
    options = _run_options(args)
    report = run_pipeline(load_workload(args.workload), options, args.cache_dir)
    if args.format == "csv":
        _emit_table(decode_table(report), args.out, "csv")
    else:
        _emit(report.model_dump_json(indent=2), args.out)

    if args.out is not None:
        print("\nRun Summary:")
        print(f"  Bits per head: {[h.bits for h in report.heads]}")
        print(f"  Prefill rel. Frobenius error: {report.prefill.rel_frobenius}")
        print(f"  Mean decode rel. Frobenius error: {report.mean_decode_rel_frobenius}")
        if report.cache is not None:
            ratio = report.cache.compression_ratio
            print(f"  Cache: {report.cache.total_bytes:,} bytes, compression ratio {ratio}")
        if args.cache_dir is not None:
            print(f"  Wrote {args.cache_dir / PLAN_FILE}")
            if report.cache is not None:
                print(f"  Wrote {args.cache_dir / CACHE_FILE}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Sweep one axis and write one row per configuration."""
    workload = load_workload(args.workload)
    table = run_sweep(workload, SweepAxis(args.axis), args.values, _run_options(args))
    _emit_table(table, args.out, args.format)
    return EXIT_OK


def cmd_softmax_bench(args: argparse.Namespace) -> int:
    """Dump the SAS exp error over a grid and summarize softmax fidelity."""
    cfg = build_lut(args.nr)
    table = exp_error_table(args.lo, args.hi, args.points, cfg)
    _emit_table(table, args.out, args.format)
    if args.rows > 0:
        fidelity = softmax_fidelity(args.rows, args.length, args.sigma, args.seed, cfg)
        print("\nSoftmax fidelity:")
        for name, value in fidelity.to_dict().items():
            print(f"  {name}: {value}")
    return EXIT_OK


def cmd_trace(args: argparse.Namespace) -> int:
    """Dump per-tile prefill state of one head for debugging against the oracle."""
    workload = load_workload(args.workload)
    if not 0 <= args.head < workload.heads:
        raise ConfigError(f"Head {args.head} outside [0, {workload.heads})")
    options = _run_options(args)
    _, plan = select_plan(workload, options)
    bits = plan.bits[args.head] if options.bits is None else options.bits

    cfg = options.attention_config(workload.spec.d)
    q, k, v = workload.q[args.head], workload.k[args.head], workload.v[args.head]
    recorder = TileTraceRecorder(args.out)
    result, _ = turbo_prefill_head(q, k, v, cfg, bits, observer=recorder, head=args.head)
    reference = reference_attention(q, k, v, cfg.causal)
    save_tensor(recorder.out_dir / "output.tqt", result.output)
    save_tensor(recorder.out_dir / "reference_output.tqt", reference.output)
    metrics = error_metrics(result.output, reference.output)
    path = recorder.write_manifest(
        {
            "head": args.head,
            "bits": bits,
            "config": cfg.model_dump(mode="json"),
            "output": "output.tqt",
            "reference_output": "reference_output.tqt",
            "metrics": metrics.to_dict(),
        }
    )
    print(f"Traced {len(recorder.records)} tiles of head {args.head} ({bits}-bit) to {path}")
    print(f"  Rel. Frobenius error vs reference: {metrics.rel_frobenius}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    """Verify workload integrity using checksums.

    Returns:
        Exit code (0 if all valid, 1 if any invalid)
    """
    store = WorkloadStore(args.workload)
    print("Verifying workload integrity...")
    print("=" * 60)
    results = store.verify_all()
    for key, ok in results.items():
        print(f"  {'ok ' if ok else 'BAD'}  {key}")
    invalid = sum(1 for ok in results.values() if not ok)
    print()
    print(f"Summary: {len(results) - invalid} valid, {invalid} invalid")
    return EXIT_OK if invalid == 0 else EXIT_FAILED


def _add_attention_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("workload", type=Path, help="Workload directory (from `gen`)")
    parser.add_argument("--br", type=int, default=DEFAULT_BLOCK_SIZE, help="Query tile rows B_r")
    parser.add_argument("--bc", type=int, default=DEFAULT_BLOCK_SIZE, help="Key tile rows B_c")
    parser.add_argument("--nb", type=int, default=DEFAULT_BUFFER_SIZE, help="Decode buffer n_b")
    parser.add_argument("--nr", type=int, default=DEFAULT_N_R, help="SAS threshold n_r")
    parser.add_argument(
        "--bits",
        type=int,
        choices=[2, 4, 8],
        default=None,
        help="Force one cache bit width for all heads (default: head plan)",
    )
    parser.add_argument(
        "--no-q2", action="store_true", help="Stage-one INT8 only (same as --bits 8)"
    )
    parser.add_argument(
        "--heads2bit", type=int, default=None, help="Number of 2-bit heads (default: half)"
    )
    parser.add_argument("--selector", choices=SELECTOR_NAMES, default="priority")
    parser.add_argument("--causal", action="store_true", help="Causal masking")
    parser.add_argument(
        "--softmax",
        choices=[m.value for m in SoftmaxMode],
        default=SoftmaxMode.SAS.value,
        help="Exponential inside the quantized kernels",
    )


def main(argv: list[str] | None = None) -> int:
    """CLI entry point.

    Args:
        argv: Command-line arguments (defaults to sys.argv[1:])

    Returns:
        Exit code: 0 ok, 1 verification failures, 2 validation error, 3 I/O error
    """
    parser = argparse.ArgumentParser(
        prog="turbo-attn",
        description="Quantized tiled attention with progressive KV-cache compression",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    gen_parser = subparsers.add_parser("gen", help="Generate a synthetic workload")
    gen_parser.add_argument("--seed", type=int, default=0)
    gen_parser.add_argument("--n", type=int, default=256, help="Prefill tokens")
    gen_parser.add_argument("--d", type=int, default=64, help="Head dim")
    gen_parser.add_argument("--heads", type=int, default=8)
    gen_parser.add_argument("--sigma", type=float, default=1.0, help="Gaussian std")
    gen_parser.add_argument("--outlier-heads", type=_int_list, default=[], help="e.g. 1,5")
    gen_parser.add_argument("--outlier-channels", type=int, default=4, help="Per outlier head")
    gen_parser.add_argument("--outlier-magnitude", type=float, default=8.0)
    gen_parser.add_argument("--decode-steps", type=int, default=16)
    gen_parser.add_argument("--out", type=Path, required=True, help="Output directory")

    run_parser = subparsers.add_parser("run", help="Run the pipeline on a workload")
    _add_attention_flags(run_parser)
    run_parser.add_argument("--steps", type=int, default=None, help="Decode steps to replay")
    run_parser.add_argument(
        "--oracle-only", action="store_true", help="Skip the quantized path (zero-error report)"
    )
    run_parser.add_argument("--out", type=Path, default=None, help="Report path (default stdout)")
    run_parser.add_argument(
        "--cache-dir", type=Path, default=None, help="Write plan.json and cache.tqc here"
    )
    run_parser.add_argument(
        "--format", choices=["json", "csv"], default="json", help="json report or csv decode steps"
    )

    sweep_parser = subparsers.add_parser("sweep", help="Sweep one parameter axis")
    _add_attention_flags(sweep_parser)
    sweep_parser.add_argument("--axis", choices=[a.value for a in SweepAxis], required=True)
    sweep_parser.add_argument(
        "--values", type=_int_list, default=None, help="Comma-separated, e.g. --values=-2,-4"
    )
    sweep_parser.add_argument("--steps", type=int, default=None)
    sweep_parser.add_argument("--out", type=Path, default=None)
    sweep_parser.add_argument("--format", choices=["csv", "json"], default="csv")

    bench_parser = subparsers.add_parser("softmax-bench", help="SAS exp error over a grid")
    bench_parser.add_argument("--nr", type=int, default=DEFAULT_N_R)
    bench_parser.add_argument("--lo", type=float, default=-8.0)
    bench_parser.add_argument("--hi", type=float, default=0.0)
    bench_parser.add_argument("--points", type=int, default=1001)
    bench_parser.add_argument("--rows", type=int, default=0, help="Random rows for fidelity")
    bench_parser.add_argument("--length", type=int, default=128)
    bench_parser.add_argument("--sigma", type=float, default=3.0)
    bench_parser.add_argument("--seed", type=int, default=0)
    bench_parser.add_argument("--out", type=Path, default=None)
    bench_parser.add_argument("--format", choices=["csv", "json"], default="csv")

    trace_parser = subparsers.add_parser("trace", help="Dump per-tile prefill state")
    _add_attention_flags(trace_parser)
    trace_parser.add_argument("--head", type=int, default=0)
    trace_parser.add_argument("--out", type=Path, required=True, help="Trace directory")

    verify_parser = subparsers.add_parser("verify", help="Verify workload checksums")
    verify_parser.add_argument("workload", type=Path)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)

    handlers: dict[str, Callable[[argparse.Namespace], int]] = {
        "gen": cmd_gen,
        "run": cmd_run,
        "sweep": cmd_sweep,
        "softmax-bench": cmd_softmax_bench,
        "trace": cmd_trace,
        "verify": cmd_verify,
    }
    handler = handlers.get(args.command)
    if handler is None:
        parser.print_help()
        return EXIT_VALIDATION

    try:
        return handler(args)
    except (ConfigError, ValidationError, ContractViolation) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TensorFormatError, ManifestError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
