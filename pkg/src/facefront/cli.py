"""Command line entry point.

Subcommands: dataset-gen, train-embedder, train, synthesize, evaluate,
embed, grid.  Module errors exit 1 with a one-line diagnostic; usage
errors exit 2.  `FACEFRONT_OUT` sets the default output directory.
"""

from __future__ import annotations

import functools
import json
from pathlib import Path

import click
import numpy as np

from .data import DatasetManifest, generate_synthetic, load_sample
from .embedder import EmbedderModel, train_embedder
from .errors import FacefrontError
from .evaluation import (
    emit_image_grid,
    export_embeddings,
    frontalize_image,
    rank1_eval,
    synthesize_frontal,
)
from .training import TrainingConfig, load_generator, train


def _module_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FacefrontError as e:
            raise click.ClickException(str(e)) from e
        except OSError as e:
            raise click.ClickException(f"I/O error: {e}") from e

    return wrapper


def _parse_yaws(text: str):
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v != ""]
    except ValueError as e:
        raise click.ClickException(f"bad yaw list {text!r}: {e}") from e


@click.group()
@click.version_option(package_name="facefront")
def main():
    """Face frontalization: synthetic data, training, and evaluation."""


@main.command("dataset-gen")
@click.option("--identities", type=int, required=True, help="Number of identities.")
@click.option("--yaws", default="0,15,30,45,60,75,90",
              help="Comma-separated yaw angles (negative allowed).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, envvar="FACEFRONT_OUT",
              type=click.Path(path_type=Path), help="Output directory.")
@click.option("--split", type=click.Choice(["train", "gallery", "probe"]),
              default="train", show_default=True)
@click.option("--first-identity", type=int, default=0, show_default=True,
              help="Label of the first identity (for disjoint splits).")
@_module_errors
def dataset_gen(identities, yaws, seed, out, split, first_identity):
    """Render a synthetic paired profile/frontal dataset."""
    manifest = generate_synthetic(identities, _parse_yaws(yaws), seed, out,
                                  split=split, first_identity=first_identity)
    click.echo(f"wrote {len(manifest.records)} records to {out}")


@main.command("train-embedder")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Embedder checkpoint path.")
@_module_errors
def train_embedder_cmd(manifest_path, epochs, seed, lr, batch_size, out):
    """Train the identity embedder on a manifest's identities."""
    manifest = DatasetManifest.load(manifest_path)
    model = train_embedder(manifest, epochs=epochs, seed=seed,
                           learning_rate=lr, batch_size=batch_size)
    model.save(out)
    click.echo(f"embedder train accuracy {model.train_accuracy:.4f}, saved to {out}")


@main.command("train")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="JSON file mirroring the training config.")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--override", multiple=True, metavar="KEY=VALUE",
              help="Config override, repeatable (e.g. total_steps=100).")
@click.option("--resume", type=click.Path(exists=True, path_type=Path),
              help="Checkpoint to resume from.")
@_module_errors
def train_cmd(config_path, manifest_path, override, resume):
    """Run adversarial training."""
    config = TrainingConfig.from_file(config_path).with_overrides(override)
    manifest = DatasetManifest.load(manifest_path)
    result = train(config, manifest, resume_from=resume, progress=True)
    click.echo(f"finished step {result.state.step}; checkpoint {result.checkpoint_path}")


@main.command("synthesize")
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--landmarks", required=True,
              help="x1,y1,x2,y2,x3,y3,x4,y4 (left eye, right eye, nose, mouth).")
@click.option("--generator", "generator_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--yaw", type=int, default=0, show_default=True,
              help="Signed yaw; negative flips the input to canonical form.")
@_module_errors
def synthesize_cmd(input_path, landmarks, generator_path, out, yaw):
    """Frontalize a single image."""
    from PIL import Image

    values = _parse_yaws(landmarks)
    if len(values) != 8:
        raise click.ClickException("landmarks must be 8 comma-separated integers")
    with Image.open(input_path) as im:
        image = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    state = load_generator(generator_path)
    frontal = frontalize_image(state, image, np.asarray(values).reshape(4, 2), yaw)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(frontal * 255.0).astype(np.uint8), mode="RGB").save(out)
    click.echo(f"wrote {out}")


@main.command("evaluate")
@click.option("--generator", "generator_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--embedder", "embedder_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--probes", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--gallery", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--report", "report_path", required=True, type=click.Path(path_type=Path))
@click.option("--train-manifest", type=click.Path(exists=True, path_type=Path),
              help="If given, enforce probe/train identity disjointness.")
@_module_errors
def evaluate_cmd(generator_path, embedder_path, probes, gallery, report_path,
                 train_manifest):
    """Rank-1 recognition via generation, with a raw-profile baseline."""
    state = load_generator(generator_path)
    embedder = EmbedderModel.load(embedder_path)
    result = rank1_eval(
        state, embedder,
        DatasetManifest.load(probes), DatasetManifest.load(gallery),
        train_manifest=DatasetManifest.load(train_manifest) if train_manifest else None)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(result.to_json() + "\n")
    click.echo(f"rank-1 synthesized {result.overall:.4f} "
               f"vs baseline {result.baseline_overall:.4f}; report {report_path}")


@main.command("embed")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--embedder", "embedder_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--source", type=click.Choice(["profile", "frontal", "synthesized"]),
              default="profile", show_default=True)
@click.option("--generator", "generator_path", type=click.Path(exists=True, path_type=Path),
              help="Required when --source synthesized.")
@_module_errors
def embed_cmd(manifest_path, embedder_path, out, source, generator_path):
    """Export per-image embeddings (and a 2-D projection) to CSV."""
    from .data import canonicalize_flip

    manifest = DatasetManifest.load(manifest_path)
    embedder = EmbedderModel.load(embedder_path)
    state = None
    if source == "synthesized":
        if generator_path is None:
            raise click.ClickException("--source synthesized requires --generator")
        state = load_generator(generator_path)
    entries = []
    for i in range(len(manifest.records)):
        sample = load_sample(manifest, i)
        if source == "profile":
            image = canonicalize_flip(sample).profile_image
        elif source == "frontal":
            image = sample.frontal_image
        else:
            image = synthesize_frontal(state, sample)
        entries.append((image, sample.identity, sample.yaw_degrees, source))
    export_embeddings(entries, embedder, out)
    click.echo(f"wrote {len(entries)} rows to {out}")


@main.command("grid")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--generator", "generator_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--count", type=int, default=3, show_default=True,
              help="Number of rows (taken from the start of the manifest).")
@_module_errors
def grid_cmd(manifest_path, generator_path, out, count):
    """Emit a profile | synthesized | ground-truth comparison grid."""
    manifest = DatasetManifest.load(manifest_path)
    state = load_generator(generator_path)
    samples = [load_sample(manifest, i)
               for i in range(min(count, len(manifest.records)))]
    emit_image_grid(samples, state, out)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
