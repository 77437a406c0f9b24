"""
Command-line interface for flowinterp.
"""
import json
import logging
import os
import platform
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click

from .config import (
    CONFIG_ENV,
    DEFAULT_CONFIG_NAME,
    ENV_PREFIX,
    find_config_file,
    load_env_files,
    resolve_config,
    upsert_config_value,
)
from .control import (
    RunConfig,
    estimate_flows,
    interpolate_at,
    lambda_sweep,
    next_update_system,
    static_baseline,
)
from .grid import (
    ConfigError,
    FlowInterpError,
    ImageIOError,
    NonFiniteCostError,
    StokesConvergenceError,
    TimeFlow,
)
from .imaging import read_flo, read_image, write_flo, write_image
from .metrics import evaluate, interpolation_error
from .selftest import all_passed, run_selftest
from .stokes import dump_matrix_market

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SOLVER = 4

METADATA_NAME = "metadata.json"


def run_pipeline_call(fn, command_name="command"):
    """Run a pipeline call and convert flowinterp exceptions into friendly CLI output."""
    try:
        return fn()
    except ImageIOError as e:
        click.echo(f"\n❌ I/O error in `flowinterp {command_name}`: {e}\n", err=True)
        sys.exit(EXIT_IO)
    except ConfigError as e:
        click.echo(f"\n❌ Invalid configuration: {e}\n", err=True)
        click.echo("   Check your flags, FLOWINTERP_* variables and config file.\n", err=True)
        sys.exit(EXIT_USAGE)
    except StokesConvergenceError as e:
        click.echo(f"\n❌ Stokes solver failed: {e}\n", err=True)
        click.echo(f"   Final residual {e.residual:.3e} after {e.iterations} iterations.", err=True)
        click.echo("   Try a larger --lambda-star or a looser stokes_tol.\n", err=True)
        sys.exit(EXIT_SOLVER)
    except NonFiniteCostError as e:
        click.echo(f"\n❌ The iteration diverged at n={e.iteration}: {e}\n", err=True)
        click.echo("   Try a larger --lambda-star.\n", err=True)
        sys.exit(EXIT_SOLVER)
    except FlowInterpError as e:
        click.echo(f"\n❌ Error: {e}\n", err=True)
        sys.exit(EXIT_SOLVER)


def parse_times(ctx, param, value: Optional[str]) -> Optional[List[float]]:
    """Parse a comma-separated list of times."""
    if value is None:
        return None
    try:
        times = [float(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got '{value}'")
    if not times:
        raise click.BadParameter("at least one time is required")
    return times


def parse_numbers(ctx, param, value: Optional[str]) -> Optional[List[float]]:
    return parse_times(ctx, param, value)


def run_options(fn):
    """Options shared by the commands that run the solver."""
    options = [
        click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
                     help=f"Config file (default: ${CONFIG_ENV} or ./{DEFAULT_CONFIG_NAME})"),
        click.option("--loop", type=click.Choice(["1", "2"]), default=None,
                     help="Segregation loop I or II (default: 2)"),
        click.option("--levels", type=int, default=None, help="Pyramid levels L (default: 3)"),
        click.option("--lambda-star", type=float, default=None,
                     help="λ at the coarsest level (default: 10^5.25)"),
        click.option("--kappa", type=float, default=None, help="Loop I geometric λ ratio (default: 10^0.1)"),
        click.option("--n-loop", type=int, default=None, help="Iterations per level (default: 10)"),
        click.option("--scheme", type=click.Choice(["char", "characteristic", "tvd"]), default=None,
                     help="Transport scheme (default: char)"),
        click.option("--nt", type=int, default=None, help="Flow time samples (default: 1)"),
        click.option("--no-average", is_flag=True, default=False,
                     help="Forward interpolation only (no swapped-pair average)"),
        click.option("--crop-border", type=int, default=None, help="Pixels excluded from IE (default: 0)"),
        click.option("--workers", type=int, default=None, help="Threads for independent solves (default: 2)"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def build_config(config_path: Optional[Path], **flags: Any) -> RunConfig:
    overrides: Dict[str, Any] = {
        "loop": flags.get("loop"),
        "pyramid_levels": flags.get("levels"),
        "lambda_star": flags.get("lambda_star"),
        "kappa": flags.get("kappa"),
        "n_loop": flags.get("n_loop"),
        "scheme": flags.get("scheme"),
        "n_t": flags.get("nt"),
        "crop_border": flags.get("crop_border"),
        "workers": flags.get("workers"),
    }
    if flags.get("no_average"):
        overrides["average"] = False
    return resolve_config(config_path, {k: v for k, v in overrides.items() if v is not None})


def read_pair(frame0: Path, frameT: Path):
    u0 = read_image(frame0)
    uT = read_image(frameT)
    if u0.shape != uT.shape:
        raise ImageIOError(
            f"frames differ in size: {u0.width}x{u0.height} vs {uT.width}x{uT.height}"
        )
    return u0, uT


def write_json(data: Dict[str, Any], path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise ImageIOError(f"Cannot write {path}: {e}") from e
    return path


def write_flows(flow, output: Path) -> List[Path]:
    """One .flo per time sample; a single sample keeps the given name."""
    if flow.n_t == 1:
        return [write_flo(flow.samples[0], output)]
    return [
        write_flo(sample, output.with_name(f"{output.stem}_{k:02d}{output.suffix}"))
        for k, sample in enumerate(flow.samples)
    ]


@click.group()
@click.version_option()
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
def main(verbose):
    """flowinterp - Interpolate frames with divergence-free optimal-control flows.

    Settings come from built-in defaults, a `key = value` config file,
    FLOWINTERP_* environment variables and command-line flags (highest priority).
    """
    load_env_files()
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)


@main.command()
@click.argument("frame0", type=click.Path(path_type=Path))
@click.argument("frame_t", type=click.Path(path_type=Path))
@click.option("--output", "-o", "output_dir", type=click.Path(path_type=Path), default=Path("out"),
              help="Output directory (default: ./out)")
@click.option("--times", callback=parse_times, default=None,
              help="Comma-separated times in [0, T] (default: T/2)")
@click.option("--frames", type=int, default=None,
              help="Number of uniformly spaced intermediate frames (e.g. 9)")
@click.option("--format", "-f", "image_format", type=click.Choice(["png", "pgm"]), default="png",
              help="Frame format (default: png)")
@click.option("--float-out", is_flag=True, help="Write loss-free PFM frames instead")
@click.option("--bit-depth", type=click.Choice(["8", "16"]), default="8",
              help="Bits per sample of PNG/PGM frames (default: 8)")
@click.option("--truth", type=click.Path(path_type=Path), default=None,
              help="Ground-truth frame at T/2; reports IE against it")
@run_options
def interp(frame0, frame_t, output_dir, times, frames, image_format, float_out, bit_depth, truth,
           config_path, **flags):
    """Interpolate frames between FRAME0 and FRAME_T.

    Writes one frame per requested time, the forward flow (.flo) and metadata.json.

    Example:
        flowinterp interp a.png b.png -o out --frames 9
        flowinterp interp a.png b.png --times 0.25,0.5,0.75 --loop 1 --levels 2
    """
    cfg = run_pipeline_call(lambda: build_config(config_path, **flags), "interp")
    if times is not None and frames is not None:
        raise click.UsageError("use either --times or --frames, not both")
    if frames is not None:
        if frames < 1:
            raise click.BadParameter("--frames must be at least 1")
        times = [k * cfg.horizon / (frames + 1) for k in range(1, frames + 1)]
    times = times or [cfg.horizon / 2.0]
    if any(t < 0.0 or t > cfg.horizon for t in times):
        raise click.BadParameter(f"times must lie in [0, {cfg.horizon}]")

    def run():
        u0, uT = read_pair(frame0, frame_t)
        reference = read_image(truth) if truth is not None else None
        click.echo(f"🔄 Estimating flows for {u0.width}x{u0.height} frames (loop {cfg.loop}, "
                   f"L={cfg.pyramid_levels})...")
        estimate = estimate_flows(u0, uT, cfg)

        written = []
        for i, t in enumerate(times):
            frame = interpolate_at(u0, uT, estimate.forward, estimate.backward, t, cfg)
            name = f"frame_{i:02d}_t{t:.4f}.{image_format}"
            written.append((t, write_image(frame, output_dir / name, float_out, int(bit_depth))))
        flow_files = write_flows(estimate.forward, output_dir / "flow.flo")

        metadata: Dict[str, Any] = {
            "config": cfg.to_dict(),
            "inputs": {"frame0": str(frame0), "frameT": str(frame_t)},
            "frames": [{"t": t, "file": path.name} for t, path in written],
            "flow_files": [path.name for path in flow_files],
            "levels": {
                "forward": [level.to_dict() for level in estimate.forward_levels],
                "backward": [level.to_dict() for level in estimate.backward_levels],
            },
        }
        if reference is not None:
            t_mid = cfg.horizon / 2.0
            mid = interpolate_at(u0, uT, estimate.forward, estimate.backward, t_mid, cfg)
            report = evaluate(mid, reference, estimate.forward, cfg.crop_border)
            baseline = interpolation_error(static_baseline(u0, uT), reference, cfg.crop_border)
            metadata["evaluation"] = {
                **report.to_dict(),
                "t": t_mid,
                "baseline_ie": baseline,
                "ie_improvement": baseline - report.ie,
            }
        write_json(metadata, output_dir / METADATA_NAME)
        return written, metadata

    written, metadata = run_pipeline_call(run, "interp")
    click.echo(f"✅ Wrote {len(written)} frame(s) to {output_dir}")
    if "evaluation" in metadata:
        evaluation = metadata["evaluation"]
        click.echo(f"   IE at T/2: {evaluation['ie']:.3f} (static baseline {evaluation['baseline_ie']:.3f})")


@main.command(name="eval")
@click.argument("interp_path", metavar="INTERP", type=click.Path(path_type=Path))
@click.argument("truth", type=click.Path(path_type=Path))
@click.option("--crop-border", type=int, default=0, help="Pixels excluded along every edge (default: 0)")
@click.option("--flow", "flow_path", type=click.Path(path_type=Path), default=None,
              help="Optional .flo file for the divergence diagnostic")
@click.option("--format", "-f", "output_format", type=click.Choice(["text", "json"]), default="text",
              help="Output format (default: text)")
@click.option("--report", "report_path", type=click.Path(path_type=Path), default=None,
              help="Also write the JSON report to this file")
def eval_command(interp_path, truth, crop_border, flow_path, output_format, report_path):
    """Compare an interpolated frame against the ground truth (IE = RMS difference).

    Example:
        flowinterp eval out/frame_00_t0.5000.png frame10.png
    """
    if crop_border < 0:
        raise click.BadParameter("--crop-border must be >= 0")

    def run():
        u = read_image(interp_path)
        u_true = read_image(truth)
        if u.shape != u_true.shape:
            raise ImageIOError(
                f"size mismatch: {u.width}x{u.height} vs {u_true.width}x{u_true.height}"
            )
        flow = None
        if flow_path is not None:
            flow = TimeFlow.stationary(read_flo(flow_path))
        report = evaluate(u, u_true, flow, crop_border)
        if report_path is not None:
            write_json(report.to_dict(), report_path)
        return report

    report = run_pipeline_call(run, "eval")
    if output_format == "json":
        click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        click.echo(f"IE: {report.ie:.3f}")


@main.command()
@click.argument("frame0", type=click.Path(path_type=Path))
@click.argument("frame_t", type=click.Path(path_type=Path))
@click.option("--output", "-o", type=click.Path(path_type=Path), default=Path("flow.flo"),
              help="Output .flo file (default: ./flow.flo)")
@click.option("--metadata", "metadata_path", type=click.Path(path_type=Path), default=None,
              help="Write per-level iteration history as JSON")
@click.option("--dump-saddle", type=click.Path(path_type=Path), default=None,
              help="Write the next Stokes system in Matrix Market format to this directory")
@run_options
def flow(frame0, frame_t, output, metadata_path, dump_saddle, config_path, **flags):
    """Estimate the flow carrying FRAME0 to FRAME_T and write it as .flo.

    Example:
        flowinterp flow a.png b.png -o ab.flo --levels 2
    """
    cfg = run_pipeline_call(lambda: build_config(config_path, **flags), "flow")
    cfg = cfg.replace(average=False)

    def run():
        u0, uT = read_pair(frame0, frame_t)
        estimate = estimate_flows(u0, uT, cfg)
        files = write_flows(estimate.forward, output)
        if metadata_path is not None:
            write_json({
                "config": cfg.to_dict(),
                "levels": [level.to_dict() for level in estimate.forward_levels],
            }, metadata_path)
        if dump_saddle is not None:
            system = next_update_system(u0, uT, estimate.forward, cfg, cfg.level_lambda(0))
            dump_matrix_market(system, dump_saddle)
        return estimate, files

    estimate, files = run_pipeline_call(run, "flow")
    click.echo(f"✅ Wrote {', '.join(str(f) for f in files)}")
    click.echo(f"   max speed {estimate.forward.max_speed():.4f} px, "
               f"terminal mismatch {estimate.final_mismatch:.4f}")


@main.command()
@click.argument("frame0", type=click.Path(path_type=Path))
@click.argument("frame_t", type=click.Path(path_type=Path))
@click.option("--lambdas", callback=parse_numbers, required=True,
              help="Comma-separated candidate λ* values")
@click.option("--truth", type=click.Path(path_type=Path), default=None,
              help="Ground-truth frame at T/2 (ranks candidates by IE)")
@click.option("--format", "-f", "output_format", type=click.Choice(["text", "json"]), default="text",
              help="Output format (default: text)")
@run_options
def sweep(frame0, frame_t, lambdas, truth, output_format, config_path, **flags):
    """Try several λ* values and report the best one.

    Example:
        flowinterp sweep a.png b.png --lambdas 1e5,3e5,1e6 --truth mid.png
    """
    cfg = run_pipeline_call(lambda: build_config(config_path, **flags), "sweep")
    if any(lam <= 0 for lam in lambdas):
        raise click.BadParameter("--lambdas must be positive")

    def run():
        u0, uT = read_pair(frame0, frame_t)
        reference = read_image(truth) if truth is not None else None
        return lambda_sweep(u0, uT, cfg, lambdas, reference)

    result = run_pipeline_call(run, "sweep")
    if output_format == "json":
        click.echo(json.dumps(result.to_dict(), indent=2, sort_keys=True))
        return
    for entry in result.entries:
        ie = f"  IE {entry.ie:.3f}" if entry.ie is not None else ""
        marker = "⭐" if entry is result.best else "  "
        click.echo(f"{marker} λ*={entry.lambda_star:.4g}  mismatch {entry.terminal_mismatch:.4f}{ie}")
    click.echo(f"\n✅ Best λ*: {result.best.lambda_star:.6g}")


@main.command()
@click.option("--quick", is_flag=True, help="Skip the Stokes convergence study")
def selftest(quick):
    """Run the embedded synthetic test suite (no datasets required)."""
    click.echo("🧪 Running self-test" + (" (quick)" if quick else "") + "...\n")
    results = run_selftest(quick=quick)
    for result in results:
        icon = "✅" if result.passed else "❌"
        click.echo(f"  {icon} {result.name}: {result.detail}")
    if all_passed(results):
        click.echo(f"\n✅ All {len(results)} checks passed")
        return
    failed = sum(not r.passed for r in results)
    click.echo(f"\n❌ {failed} of {len(results)} checks failed", err=True)
    sys.exit(EXIT_FAILED)


@main.command()
@click.option("--file", "config_file", type=click.Path(path_type=Path), default=None,
              help=f"Config file to update (default: ./{DEFAULT_CONFIG_NAME})")
@click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE",
              help="Set a key (repeatable), e.g. --set lambda_star=2e5")
def config(config_file, assignments):
    """Update the config file and print the effective configuration.

    Example:
        flowinterp config --set loop=1 --set pyramid_levels=2
        flowinterp config                  # show effective settings
    """
    target = config_file or find_config_file() or Path.cwd() / DEFAULT_CONFIG_NAME
    updates = {}
    for item in assignments:
        if "=" not in item:
            raise click.BadParameter(f"expected KEY=VALUE, got '{item}'", param_hint="--set")
        key, value = (part.strip() for part in item.split("=", 1))
        updates[key] = value

    def run():
        existing = target if target.exists() else None
        base = resolve_config(existing)
        # Validate before touching the file
        RunConfig.from_mapping(updates, base)
        for key, value in updates.items():
            upsert_config_value(target, key, value)
        return resolve_config(target) if target.exists() else base

    cfg = run_pipeline_call(run, "config")
    if updates:
        click.echo(f"✓ Updated {', '.join(sorted(updates))} in {target}\n")
    click.echo("Effective configuration:")
    for key, value in cfg.to_dict().items():
        click.echo(f"  {key} = {value}")


@main.command()
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
def debug(verbose):
    """Print debug information and environment settings.

    Useful for troubleshooting configuration issues.
    """
    click.echo("🐛 Debug Information\n")

    click.echo("System Information:")
    click.echo(f"  Python Version: {sys.version}")
    click.echo(f"  Platform: {platform.platform()}\n")

    from . import __version__
    click.echo(f"flowinterp Version: {__version__}\n")

    click.echo("Dependencies:")
    for module in ("numpy", "scipy", "PIL", "click", "dotenv"):
        try:
            imported = __import__(module)
            version = getattr(imported, "__version__", "unknown")
            click.echo(f"  ✅ {module} {version}")
        except ImportError:
            click.echo(f"  ❌ {module} is not installed")
    click.echo()

    click.echo("Environment Variables:")
    names = sorted(name for name in os.environ if name.startswith(ENV_PREFIX))
    if names:
        for name in names:
            click.echo(f"  ✅ {name}={os.environ[name]}")
    else:
        click.echo(f"  ⚠️  No {ENV_PREFIX}* variables set")
    click.echo()

    click.echo("Configuration Files:")
    path = find_config_file()
    if path is not None and path.exists():
        click.echo(f"  ✅ {path}")
    elif path is not None:
        click.echo(f"  ❌ {path} does not exist")
    else:
        click.echo(f"  ⚠️  No config file (create one with 'flowinterp config --set KEY=VALUE')")
    click.echo()

    if verbose:
        click.echo("Enabling verbose logging...\n")
        logging.basicConfig(level=logging.DEBUG, force=True)
        logging.getLogger("flowinterp").debug("Debug logging enabled")


if __name__ == "__main__":
    main()
