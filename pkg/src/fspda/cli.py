"""Command-line interface for the FSPDA simulator."""

from __future__ import annotations

import argparse
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

from fspda import __version__
from fspda.graph import DEFAULT_MONTE_CARLO_SAMPLES

if TYPE_CHECKING:
    from typing import Sequence

COMMANDS = ("run", "preset", "analyze", "spectral")


@dataclass
class Args:
    """Parsed command-line arguments."""

    command: str
    verbose: int = 0

    # run
    config_path: Path | None = None

    # run and preset
    seeds: int | None = None  # None = preset default, or 1
    out: Path | None = None
    csv: bool = False

    # preset
    preset: str | None = None
    overrides: list[str] = field(default_factory=list)
    seed: int = 0
    list_presets: bool = False

    # analyze
    directory: Path | None = None

    # spectral
    topology: str | None = None
    sampler: str | None = None
    mode: str = "exact"
    dim: int = 1
    samples: int = DEFAULT_MONTE_CARLO_SAMPLES


def _get_version_string() -> str:
    """Get enhanced version string with Python and platform info."""
    py_version = f"{sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}"
    py_impl = platform.python_implementation()
    os_info = platform.system()
    arch = platform.machine()

    return (
        f"fspda {__version__}\n"
        f"Python: {py_impl} {py_version}\n"
        f"Platform: {os_info} {arch}"
    )


def _positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Invalid integer: {value}") from None
    if number < 1:
        raise argparse.ArgumentTypeError(f"Must be at least 1, got {number}")
    return number


def _add_output_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seeds",
        dest="seeds",
        type=_positive_int,
        metavar="N",
        default=None,
        help="Number of seed replicates (default: the preset's, else 1)",
    )
    parser.add_argument(
        "--out",
        dest="out",
        type=Path,
        metavar="DIR",
        help="Write manifest, per-seed JSONL metrics and summary.json to DIR",
    )
    parser.add_argument(
        "--csv",
        dest="csv",
        action="store_true",
        help="Also write a CSV copy of every metrics file",
    )


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog="fspda",
        description="Simulate decentralized stochastic primal-dual optimization over sparse random graphs.",
        epilog="Set FSPDA_THREADS to cap the number of seeds run in parallel.",
    )

    parser.add_argument(
        "--version",
        action="version",
        version=_get_version_string(),
    )

    parser.add_argument(
        "-v",
        dest="verbose",
        action="count",
        default=0,
        help="Log progress (-v) or per-event detail (-vv)",
    )

    commands = parser.add_subparsers(dest="command", metavar="command", required=True)

    run = commands.add_parser("run", help="Run a configuration document")
    run.add_argument(
        "--config",
        dest="config_path",
        type=Path,
        required=True,
        metavar="PATH",
        help="JSON (or .toml) run document, or a document naming a preset",
    )
    _add_output_options(run)

    preset = commands.add_parser("preset", help="Run a named experiment preset")
    preset.add_argument("preset", nargs="?", metavar="name", help="Preset name")
    preset.add_argument(
        "--list",
        dest="list_presets",
        action="store_true",
        help="List presets and exit",
    )
    preset.add_argument(
        "--override",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Dotted-path override applied to every run (can be specified multiple times)",
    )
    preset.add_argument(
        "--seed",
        dest="seed",
        type=int,
        default=0,
        metavar="N",
        help="Master seed (default: 0)",
    )
    _add_output_options(preset)

    analyze = commands.add_parser("analyze", help="Recompute summary.json of a result directory")
    analyze.add_argument("directory", type=Path, metavar="dir", help="Batch output directory")

    spectral = commands.add_parser("spectral", help="Print the spectral constants of a sampler")
    spectral.add_argument(
        "--topology",
        dest="topology",
        required=True,
        metavar="SPEC",
        help="ring:N, complete:N, path:N, star:N, er:N:P[:SEED] or file:PATH",
    )
    spectral.add_argument(
        "--sampler",
        dest="sampler",
        required=True,
        metavar="SPEC",
        help="one_edge[:S], full[:S], bernoulli:P[:S] or periodic:K[:S]",
    )
    spectral.add_argument(
        "--mode",
        dest="mode",
        choices=("exact", "monte_carlo"),
        default="exact",
        help="Exact enumeration or Monte Carlo estimate of sigma_A^2 (default: exact)",
    )
    spectral.add_argument(
        "--d",
        dest="dim",
        type=_positive_int,
        default=1,
        metavar="N",
        help="Per-agent dimension (default: 1)",
    )
    spectral.add_argument(
        "--samples",
        dest="samples",
        type=_positive_int,
        default=DEFAULT_MONTE_CARLO_SAMPLES,
        metavar="N",
        help=f"Monte Carlo sample count (default: {DEFAULT_MONTE_CARLO_SAMPLES})",
    )

    return parser


def parse_args(argv: Sequence[str] | None = None) -> Args:
    """Parse command-line arguments.

    Args:
        argv: Command-line arguments. Uses sys.argv[1:] if not specified.

    Returns:
        Parsed arguments as Args dataclass.
    """
    parser = create_parser()
    ns = parser.parse_args(argv)

    if ns.command == "preset" and not ns.list_presets and not ns.preset:
        parser.error("preset: a preset name is required unless --list is given")

    return Args(
        command=ns.command,
        verbose=ns.verbose,
        config_path=getattr(ns, "config_path", None),
        seeds=getattr(ns, "seeds", None),
        out=getattr(ns, "out", None),
        csv=getattr(ns, "csv", False),
        preset=getattr(ns, "preset", None),
        overrides=getattr(ns, "overrides", []),
        seed=getattr(ns, "seed", 0),
        list_presets=getattr(ns, "list_presets", False),
        directory=getattr(ns, "directory", None),
        topology=getattr(ns, "topology", None),
        sampler=getattr(ns, "sampler", None),
        mode=getattr(ns, "mode", "exact"),
        dim=getattr(ns, "dim", 1),
        samples=getattr(ns, "samples", DEFAULT_MONTE_CARLO_SAMPLES),
    )
