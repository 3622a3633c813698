# Copyright 2020 reflected_coherence developers
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import functools
import json
import logging
import random
import sys
from pathlib import Path

import click
from click_didyoumean import DYMGroup

from halo import Halo
from spinners import Spinners

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

from . import artifacts, runner
from .config import PRESETS, SCALES, RunConfig, list_presets
from .exceptions import CoherenceError
from .utils import format_complex, num_bytes_to_str, table
from .version import version as version_string

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

SPINNERS = list(name for name in Spinners.__members__ if name.startswith("dots"))


def make_spinner(*args, **kwargs):
    return Halo(*args, spinner=random.choice(SPINNERS), stream=sys.stderr, **kwargs)


CONTEXT_SETTINGS = dict(help_option_names=["-h", "--help"])


@click.group(context_settings=CONTEXT_SETTINGS, cls=DYMGroup)
@click.option(
    "--verbose",
    "-v",
    is_flag=True,
    default=False,
    help="Show log messages as the CLI runs.",
)
def cli(verbose):
    """reflected_coherence command line tool."""
    logger.debug('CLI called with arguments "{}"'.format(" ".join(sys.argv[1:])))
    if verbose:
        _start_logger()


def _start_logger():
    """Initialize a basic logger for reflected_coherence for the CLI."""
    logger = logging.getLogger("reflected_coherence")
    logger.setLevel(logging.DEBUG)

    handler = logging.StreamHandler(stream=sys.stderr)
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(
        logging.Formatter("%(asctime)s ~ %(levelname)s ~ %(name)s:%(funcName)s:%(lineno)d ~ %(message)s")
    )

    logger.addHandler(handler)

    return handler


_HEADER_FMT = functools.partial(click.style, bold=True)

_workers_option = click.option(
    "--workers",
    type=click.IntRange(min=1),
    default=None,
    help="Worker threads for assembly and particle blocks (default: $REFLECTED_COHERENCE_THREADS or 1).",
)
_out_option = click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, writable=True),
    default="out",
    show_default=True,
    help="Directory to write artifacts and the manifest into.",
)


def _parse_override(raw: str):
    key, sep, value = raw.partition("=")
    if not sep or not key:
        raise click.BadParameter("expected KEY=VALUE, got {!r}".format(raw), param_hint="--set")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _execute(config: RunConfig, out_dir, workers):
    with make_spinner("Running {}...".format(config.name or config.experiment)) as spinner:
        try:
            manifest = runner.run(config, out_dir, workers=workers, on_phase=lambda phase: setattr(spinner, "text", phase))
        except CoherenceError as e:
            spinner.fail(str(e))
            raise click.ClickException(str(e))
        spinner.succeed("Finished {} in {:.1f} s".format(config.name or config.experiment, sum(p["seconds"] for p in manifest.phases)))

    _echo_results(manifest)
    click.echo("Wrote {} artifacts to {}".format(len(manifest.artifacts), out_dir))
    return manifest


def _echo_results(manifest: runner.RunManifest):
    results = manifest.results
    if "eigenvalues" in results:
        companions = {c["index"]: c for c in results.get("companions", [])}
        rows = []
        for i, (mu, sigma) in enumerate(zip(results["eigenvalues"], results["sigma"]), start=1):
            companion = companions.get(i)
            rows.append(
                dict(
                    index=i,
                    mu=format_complex(complex(mu["re"], mu["im"])),
                    sigma="" if sigma is None else "{:.5f}".format(sigma),
                    companion="" if companion is None else "{} (k={:+d})".format(companion["parent"], companion["k"]),
                )
            )
        click.echo(table(headers=["index", "mu", "sigma", "companion"], rows=rows, header_fmt=_HEADER_FMT))

    scalars = [
        dict(result=key, value=value)
        for key, value in _flatten({k: v for k, v in results.items() if k not in ("eigenvalues", "sigma", "companions")})
    ]
    if scalars:
        click.echo(table(headers=["result", "value"], rows=scalars, header_fmt=_HEADER_FMT, alignment=dict(result="ljust", value="ljust")))


def _flatten(document, prefix=""):
    for key, value in document.items():
        if isinstance(value, dict):
            yield from _flatten(value, "{}{}.".format(prefix, key))
        elif isinstance(value, float):
            yield "{}{}".format(prefix, key), "{:.6g}".format(value)
        elif isinstance(value, list) and len(value) > 8:
            yield "{}{}".format(prefix, key), "[{} entries]".format(len(value))
        else:
            yield "{}{}".format(prefix, key), value


@cli.command()
def version():
    """Print reflected_coherence version information."""
    click.echo(version_string())


@cli.command("list-presets")
def presets():
    """List the named experiment presets that reproduce can run."""
    click.echo(
        table(
            headers=["preset", "description"],
            rows=[dict(preset=name, description=description) for name, description in list_presets()],
            header_fmt=_HEADER_FMT,
            alignment=dict(preset="ljust", description="ljust"),
        )
    )


@cli.command()
@click.argument("config_path", metavar="CONFIG", type=click.Path(exists=True, dir_okay=False, resolve_path=True))
@_out_option
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the configured random seed.")
@click.option("--set", "overrides", multiple=True, help="Override one dotted configuration key, as KEY=JSON.")
@_workers_option
def run(config_path, out_dir, seed, overrides, workers):
    """Run the experiment described by a JSON configuration file."""
    try:
        config = RunConfig.from_json(config_path)
        updates = dict(_parse_override(raw) for raw in overrides)
        if seed is not None:
            updates["seed"] = seed
        if updates:
            config = config.with_overrides(updates)
    except CoherenceError as e:
        raise click.ClickException(str(e))

    _execute(config, out_dir, workers)


@cli.command()
@click.argument("preset", type=click.Choice(list(PRESETS)))
@_out_option
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the preset's random seed.")
@click.option("--scale", type=click.Choice(SCALES), default="full", show_default=True, help="Full resolution or a reduced CI run.")
@_workers_option
def reproduce(preset, out_dir, seed, scale, workers):
    """Run one of the named experiment presets."""
    document = dict(experiment="reproduce", preset=preset, scale=scale)
    if seed is not None:
        document["seed"] = seed
    try:
        config = RunConfig.from_dict(document)
    except CoherenceError as e:
        raise click.ClickException(str(e))

    _execute(config, out_dir, workers)


@cli.command()
@click.argument("manifest_path", metavar="MANIFEST", type=click.Path(exists=True, dir_okay=False, resolve_path=True))
@_out_option
@_workers_option
def rerun(manifest_path, out_dir, workers):
    """Re-run the experiment recorded in a manifest and report any result that changed."""
    try:
        previous = runner.RunManifest.from_json(manifest_path)
        config = previous.run_config()
    except CoherenceError as e:
        raise click.ClickException(str(e))

    manifest = _execute(config, out_dir, workers)
    differences = runner.scalar_differences(previous.results, manifest.results)
    if differences:
        raise click.ClickException("results differ from {}: {}".format(manifest_path, ", ".join(differences)))
    click.echo("Results match {}".format(manifest_path))


@cli.command()
@click.argument("out_dir", type=click.Path(exists=True, file_okay=False, resolve_path=True))
def verify(out_dir):
    """Check every artifact recorded in a run's manifest against its checksum."""
    manifest_path = Path(out_dir) / runner.MANIFEST_NAME
    if not manifest_path.exists():
        raise click.ClickException("no {} in {}".format(runner.MANIFEST_NAME, out_dir))
    manifest = runner.RunManifest.from_json(manifest_path)
    bad = artifacts.verify(out_dir, manifest.artifacts)

    rows = [
        dict(
            artifact=record["path"],
            kind=record["kind"],
            size=num_bytes_to_str(record["bytes"]),
            status="CHANGED" if record["path"] in bad else "ok",
        )
        for record in manifest.artifacts
    ]
    click.echo(table(headers=["artifact", "kind", "size", "status"], rows=rows, header_fmt=_HEADER_FMT, alignment=dict(artifact="ljust")))
    if bad:
        raise click.ClickException("{} artifacts do not match the manifest".format(len(bad)))


@cli.command()
@click.argument("out_dir", type=click.Path(exists=True, file_okay=False, resolve_path=True))
@click.option("--format", default="png")
@click.option("--cmap", default="RdBu_r", show_default=True)
def plot(out_dir, format, cmap):
    """Make figures from the fiber grids, streamfunction and optimization history of a run."""
    out_dir = Path(out_dir)
    with make_spinner("Plotting {}...".format(out_dir)) as spinner:
        made = 0
        for path in sorted(out_dir.glob("*_slab*.csv")):
            image = pd.read_csv(path).to_numpy()
            fig, ax = plt.subplots(figsize=(6, 3.5))
            mesh = ax.imshow(image, cmap=cmap, aspect="auto")
            fig.colorbar(mesh, ax=ax)
            ax.set_title(path.stem)
            ax.set_xticks([])
            ax.set_yticks([])
            plt.tight_layout()
            plt.savefig(path.with_suffix(".{}".format(format)))
            plt.close(fig)
            made += 1

        stream = out_dir / "streamfunction.csv"
        if stream.exists():
            grid = pd.read_csv(stream).pivot(index="y", columns="x", values="psi")
            fig, ax = plt.subplots(figsize=(6, 3.5))
            contours = ax.contourf(grid.columns, grid.index, grid.to_numpy(), levels=20, cmap=cmap)
            fig.colorbar(contours, ax=ax)
            ax.set_xlabel("x")
            ax.set_ylabel("y")
            plt.tight_layout()
            plt.savefig(out_dir / "streamfunction.{}".format(format))
            plt.close(fig)
            made += 1

        history = out_dir / "optimization.csv"
        if history.exists():
            df = pd.read_csv(history)
            df = df[df["accepted"]]
            fig, ax = plt.subplots(figsize=(5, 3.5))
            ax.plot(df["step"], df["objective"], marker="o")
            ax.set_xlabel("step")
            ax.set_ylabel("objective")
            plt.tight_layout()
            plt.savefig(out_dir / "optimization.{}".format(format))
            plt.close(fig)
            made += 1

        spinner.succeed("Made {} figures in {}".format(made, out_dir))


if __name__ == "__main__":
    cli()
