"""Main entry point for the FSPDA simulator."""

from __future__ import annotations

import json
import logging
import sys

from fspda.algorithms import AlgorithmError
from fspda.async_runtime import AsyncRuntimeError
from fspda.batch import BatchError, LabeledRun, analyze, read_manifest, run_batch
from fspda.cli import Args, parse_args
from fspda.config import ConfigError, PresetInvocation, load_config, parse_sampler_spec, parse_topology_spec
from fspda.engine import EngineError
from fspda.graph import GraphError, build_incidence, spectral_constants
from fspda.metrics import MetricsError
from fspda.objectives import ObjectiveError
from fspda.presets import PRESETS, PresetError, expand_invocation, expand_preset, get_preset

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"

_ERRORS = (
    ConfigError,
    PresetError,
    BatchError,
    EngineError,
    AsyncRuntimeError,
    GraphError,
    ObjectiveError,
    AlgorithmError,
    MetricsError,
)


def main(argv: list[str] | None = None) -> int:
    """Main entry point.

    Args:
        argv: Command-line arguments. Uses sys.argv[1:] if not specified.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    args = parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format=LOG_FORMAT)

    try:
        return _run(args)
    except KeyboardInterrupt:
        print("\nInterrupted.")
        return 130
    except _ERRORS as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


def _run(args: Args) -> int:
    if args.command == "run":
        return _run_config(args)
    if args.command == "preset":
        return _list_presets() if args.list_presets else _run_preset(args)
    if args.command == "analyze":
        return _analyze(args)
    return _spectral(args)


def _run_config(args: Args) -> int:
    config = load_config(args.config_path)
    if isinstance(config, PresetInvocation):
        preset = get_preset(config.name)
        result = run_batch(
            expand_invocation(config),
            n_seeds=args.seeds or preset.default_seeds,
            out_dir=args.out,
            summarizer=preset.summarize,
            preset=preset.name,
            preset_seed=config.seed,
            csv=args.csv,
        )
    else:
        out = args.out if args.out is not None else config.output.dir
        result = run_batch(
            [LabeledRun(label="run", config=config)],
            n_seeds=args.seeds or 1,
            out_dir=out,
            csv=args.csv or config.output.csv,
        )
    _print_summary(result.summary)
    if result.out_dir is not None:
        print(f"\nResults written to {result.out_dir}")
    return 0


def _run_preset(args: Args) -> int:
    preset = get_preset(args.preset)
    runs = expand_preset(preset.name, args.seed, args.overrides)
    result = run_batch(
        runs,
        n_seeds=args.seeds or preset.default_seeds,
        out_dir=args.out,
        summarizer=preset.summarize,
        preset=preset.name,
        preset_seed=args.seed,
        csv=args.csv,
    )
    _print_summary(result.summary)
    if result.out_dir is not None:
        print(f"\nResults written to {result.out_dir}")
    return 0


def _list_presets() -> int:
    width = max(len(name) for name in PRESETS)
    for name, preset in PRESETS.items():
        print(f"  {name:<{width}}  {preset.description} (seeds: {preset.default_seeds})")
    return 0


def _analyze(args: Args) -> int:
    manifest = read_manifest(args.directory)
    name = manifest.get("preset")
    summarizer = get_preset(name).summarize if name else None
    _print_summary(analyze(args.directory, summarizer))
    return 0


def _spectral(args: Args) -> int:
    topology = parse_topology_spec(args.topology).build()
    sampler = parse_sampler_spec(args.sampler)
    report = spectral_constants(
        sampler, build_incidence(topology), d=args.dim, mode=args.mode, num_samples=args.samples
    )
    print(report.format())
    print(f"gamma bound:  {report.gamma_bound:.6g}")
    return 0


def _format_value(value: float | None) -> str:
    return "-" if value is None else f"{value:.4g}"


def _print_summary(summary: dict) -> None:
    """Print final metrics per run, then any preset fits."""
    for label, run in summary["runs"].items():
        final = run["final"]
        print(f"[{label}] seeds={run['n_seeds']} bits={run['bits_total']:.4g}")
        print(f"    grad_norm_sq_avg:  {_format_value(final['grad_norm_sq_avg'])}")
        print(f"    worst_grad_norm_sq: {_format_value(final['worst_grad_norm_sq'])}")
        print(f"    consensus_err:     {_format_value(final['consensus_err'])}")
        print(f"    suboptimality:     {_format_value(final['suboptimality'])}")
    if "fits" in summary:
        print("\nFits:")
        print(json.dumps(summary["fits"], indent=2, sort_keys=True))


if __name__ == "__main__":
    sys.exit(main())
