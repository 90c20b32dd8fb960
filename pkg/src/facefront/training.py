"""Alternating adversarial training with deterministic replay.

All per-step randomness (batch indices, noise) is derived functionally
from (seed, step), so runs are bit-reproducible and resuming from a
checkpoint continues the exact same trajectory.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import read_archive, require_version, write_archive
from .data import DatasetManifest, load_all
from .discriminator import PatchDiscriminator
from .embedder import EmbedderModel
from .errors import CheckpointError, ConfigurationError, NumericsError, ValidationError
from .generator import TwoPathwayGenerator, init_parameters
from .losses import (
    LossWeights,
    adversarial_d_loss,
    adversarial_g_loss,
    cross_entropy_id,
    identity_loss,
    pixel_loss_total,
    symmetry_loss,
    total_synthesis_loss,
    tv_loss,
)
from .patches import DEFAULT_PATCH_SPECS, PatchSpec

TRAINER_VERSION = 1
ADAM_BETAS = (0.9, 0.999)

# checkpoint key prefix translation: module attribute path -> archive name
_SAVE_PREFIXES = (
    ("global_enc.", "global.enc."),
    ("global_dec.", "global.dec."),
    ("local_paths.", "local."),
)


def _rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, path)])))


@dataclass
class TrainingConfig:
    batch_size: int = 10
    learning_rate: float = 1e-4
    total_steps: int = 2000
    seed: int = 0
    width_multiplier: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    use_local_pathway: bool = True
    use_ip: bool = True
    use_adv: bool = True
    use_sym: bool = True
    d_steps_per_g_step: int = 1
    checkpoint_interval: int = 500
    output_dir: str = "runs/default"
    embedder_path: str = ""

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.total_steps < 0:
            raise ValidationError("total_steps must be >= 0")
        if self.width_multiplier <= 0:
            raise ValidationError("width_multiplier must be > 0")
        if self.d_steps_per_g_step < 1:
            raise ValidationError("d_steps_per_g_step must be >= 1")
        if self.checkpoint_interval < 1:
            raise ValidationError("checkpoint_interval must be >= 1")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["weights"] = dataclasses.asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainingConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"malformed config {path}: {e}") from e
        return cls.from_dict(payload)

    def with_overrides(self, overrides) -> "TrainingConfig":
        """Apply `key=value` strings; values parse as JSON, else as text."""
        d = self.to_dict()
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigurationError(f"override {item!r} is not key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            if key.startswith("weights."):
                d["weights"][key[len("weights."):]] = value
            elif key in d:
                d[key] = value
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
        return TrainingConfig.from_dict(d)


@dataclass
class TrainerState:
    generator: TwoPathwayGenerator
    discriminator: PatchDiscriminator
    id_head: nn.Linear
    g_opt: torch.optim.Adam
    d_opt: torch.optim.Adam
    config: TrainingConfig
    identities: list
    step: int = 0

    @property
    def patch_specs(self):
        return self.generator.patch_specs


def build_state(config: TrainingConfig, identities,
                patch_specs=DEFAULT_PATCH_SPECS) -> TrainerState:
    identities = sorted(int(i) for i in identities)
    gen = TwoPathwayGenerator(
        width_multiplier=config.width_multiplier,
        patch_specs=patch_specs,
        use_local_pathway=config.use_local_pathway,
    )
    disc = PatchDiscriminator(config.width_multiplier)
    head = nn.Linear(gen.vid_dim, len(identities))
    init_parameters(gen, int(np.random.SeedSequence([config.seed, 1]).generate_state(1)[0]))
    init_parameters(disc, int(np.random.SeedSequence([config.seed, 2]).generate_state(1)[0]))
    init_parameters(head, int(np.random.SeedSequence([config.seed, 3]).generate_state(1)[0]))
    g_opt = torch.optim.Adam(
        list(gen.parameters()) + list(head.parameters()),
        lr=config.learning_rate, betas=ADAM_BETAS)
    d_opt = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=ADAM_BETAS)
    return TrainerState(gen, disc, head, g_opt, d_opt, config, identities)


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

def _translate(key: str, table, reverse: bool = False) -> str:
    for src, dst in table:
        a, b = (dst, src) if reverse else (src, dst)
        if key.startswith(a):
            return b + key[len(a):]
    return key


def _module_arrays(module: nn.Module, prefix: str, table=()) -> dict:
    out = {}
    for key, value in module.state_dict().items():
        out[prefix + _translate(key, table)] = value.detach().cpu().numpy()
    return out


def _load_module(module: nn.Module, arrays: dict, prefix: str, path, table=()) -> None:
    state = {}
    for key, value in arrays.items():
        if key.startswith(prefix):
            state[_translate(key[len(prefix):], table, reverse=True)] = \
                torch.from_numpy(value.copy())
    try:
        module.load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointError(f"{path}: {e}") from e


def _optimizer_arrays(opt: torch.optim.Adam, prefix: str) -> dict:
    out = {}
    for idx, st in opt.state_dict()["state"].items():
        for name, value in st.items():
            out[f"{prefix}{idx:04d}.{name}"] = (
                value.detach().cpu().numpy() if torch.is_tensor(value)
                else np.asarray(value))
    return out


def _load_optimizer(opt: torch.optim.Adam, arrays: dict, prefix: str) -> None:
    sd = opt.state_dict()
    state = {}
    for key, value in arrays.items():
        if not key.startswith(prefix):
            continue
        rest = key[len(prefix):]
        idx_s, _, name = rest.partition(".")
        st = state.setdefault(int(idx_s), {})
        st[name] = torch.from_numpy(value.copy())
    sd["state"] = state
    opt.load_state_dict(sd)


def save_checkpoint(state: TrainerState, path) -> Path:
    arrays = {}
    arrays.update(_module_arrays(state.generator, "", _SAVE_PREFIXES))
    arrays.update(_module_arrays(state.discriminator, "disc."))
    arrays.update(_module_arrays(state.id_head, "id_head."))
    arrays.update(_optimizer_arrays(state.g_opt, "optim.g."))
    arrays.update(_optimizer_arrays(state.d_opt, "optim.d."))
    meta = {
        "format_version": TRAINER_VERSION,
        "kind": "trainer",
        "step": state.step,
        "identities": state.identities,
        "config": state.config.to_dict(),
        "patch_specs": [
            {"name": s.name, "width": s.width, "height": s.height,
             "template_center": list(s.template_center)}
            for s in state.patch_specs
        ],
    }
    return write_archive(path, arrays, meta)


def load_checkpoint(path, expected_width_multiplier: float | None = None) -> TrainerState:
    arrays, meta = read_archive(path)
    require_version(meta, TRAINER_VERSION, path)
    if meta.get("kind") != "trainer":
        raise CheckpointError(f"{path} is not a trainer checkpoint")
    config = TrainingConfig.from_dict(meta["config"])
    if expected_width_multiplier is not None and \
            expected_width_multiplier != config.width_multiplier:
        raise ValidationError(
            f"checkpoint {path} was trained at width {config.width_multiplier}, "
            f"requested {expected_width_multiplier}"
        )
    specs = tuple(
        PatchSpec(s["name"], s["width"], s["height"], tuple(s["template_center"]))
        for s in meta["patch_specs"]
    )
    state = build_state(config, meta["identities"], patch_specs=specs)
    state.step = int(meta["step"])
    _load_module(state.generator, arrays, "", path, _SAVE_PREFIXES)
    _load_module(state.discriminator, arrays, "disc.", path)
    _load_module(state.id_head, arrays, "id_head.", path)
    _load_optimizer(state.g_opt, arrays, "optim.g.")
    _load_optimizer(state.d_opt, arrays, "optim.d.")
    return state


def load_generator(path) -> TrainerState:
    """Checkpoint -> state with networks in eval mode, for inference."""
    state = load_checkpoint(path)
    state.generator.eval()
    state.discriminator.eval()
    return state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainingResult:
    state: TrainerState
    reports: list
    checkpoint_path: Path
    log_path: Path


class _Batcher:
    """Preloaded, flip-canonicalized training tensors."""

    def __init__(self, manifest: DatasetManifest, identities):
        samples = load_all(manifest, canonicalize=True)
        if not samples:
            raise ValidationError("manifest has no records")
        label_of = {ident: k for k, ident in enumerate(identities)}
        self.profiles = torch.from_numpy(np.stack(
            [s.profile_image.transpose(2, 0, 1) for s in samples])).float()
        self.frontals = torch.from_numpy(np.stack(
            [s.frontal_image.transpose(2, 0, 1) for s in samples])).float()
        self.landmarks = np.stack([s.landmarks_profile for s in samples])
        self.labels = torch.tensor(
            [label_of[s.identity] for s in samples], dtype=torch.long)
        self.count = len(samples)

    def batch(self, idx: np.ndarray):
        t = torch.from_numpy(idx.astype(np.int64))
        return (self.profiles[t], self.frontals[t], self.landmarks[idx], self.labels[t])


def train(config: TrainingConfig, manifest: DatasetManifest,
          embedder: EmbedderModel | None = None,
          resume_from=None, progress: bool = False) -> TrainingResult:
    """Run the alternating optimization and write checkpoints plus a
    deterministic JSONL loss log (one record per step, no wall-clock data).
    """
    if config.use_ip and embedder is None:
        if not config.embedder_path:
            raise ConfigurationError(
                "use_ip=true requires an embedder (embedder_path or instance)")
        embedder = EmbedderModel.load(config.embedder_path)
    if embedder is not None:
        embedder.freeze()

    data_identities = sorted({r.identity for r in manifest.records})
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state.config.to_dict() != config.to_dict():
            raise ConfigurationError(
                "resume config differs from checkpoint config")
        if state.identities != data_identities:
            raise ConfigurationError(
                "resume manifest identities differ from checkpoint identities")
    else:
        state = build_state(config, data_identities)

    gen, disc, head = state.generator, state.discriminator, state.id_head
    weights = config.weights
    batcher = _Batcher(manifest, state.identities)

    # The embedder is frozen, so ground-truth activations are constants;
    # compute them once per identity.
    gt_acts = None
    if config.use_ip:
        with torch.no_grad():
            label_arr = batcher.labels.numpy()
            rows = torch.tensor([
                int(np.nonzero(label_arr == k)[0][0])
                for k in range(len(state.identities))
            ])
            gt_acts = embedder.activations(batcher.frontals[rows])

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "losses.jsonl"
    log_mode = "a" if resume_from is not None else "w"

    reports = []
    started = time.monotonic()
    gen.train()
    disc.train()
    with open(log_path, log_mode) as log:
        for step in range(state.step + 1, config.total_steps + 1):
            rng = _rng(config.seed, 7001, step)
            idx = rng.integers(0, batcher.count, size=config.batch_size)
            noise = torch.from_numpy(
                rng.standard_normal((config.batch_size, gen.noise_dim)).astype(np.float32))
            profiles, frontals, landmarks, labels = batcher.batch(idx)

            out = gen.synthesize(profiles, landmarks, noise)

            d_value = 0.0
            if config.use_adv:
                fake = out.fused_image.detach()
                for _ in range(config.d_steps_per_g_step):
                    state.d_opt.zero_grad()
                    d_loss = adversarial_d_loss(disc(frontals), disc(fake))
                    if not torch.isfinite(d_loss):
                        raise NumericsError(
                            f"discriminator loss non-finite at step {step}")
                    d_loss.backward()
                    state.d_opt.step()
                d_value = float(d_loss.detach())

            parts = {
                "pixel": pixel_loss_total(out, frontals, weights, gen.patch_specs),
                "tv": tv_loss(out.fused_image),
                "cross_entropy": cross_entropy_id(out.identity_vector, labels, head),
            }
            parts["symmetry"] = (
                symmetry_loss(out.fused_image, weights.lap_weight)
                if config.use_sym else 0.0)
            parts["adversarial"] = (
                adversarial_g_loss(disc(out.fused_image)) if config.use_adv else 0.0)
            parts["identity"] = (
                identity_loss(out.fused_image,
                              tuple(a[labels] for a in gt_acts),
                              embedder.activations)
                if config.use_ip else 0.0)
            try:
                joint, report = total_synthesis_loss(
                    parts, weights, batch_size=config.batch_size, step=step)
            except NumericsError as e:
                raise NumericsError(f"{e} at step {step}") from e

            state.g_opt.zero_grad()
            joint.backward()
            state.g_opt.step()
            state.step = step

            reports.append(report)
            log.write(report.to_json_line() + "\n")

            if progress and (step % 100 == 0 or step == config.total_steps):
                elapsed = time.monotonic() - started
                print(
                    f"step {step}/{config.total_steps} "
                    f"total_syn={report.total_syn:.4f} d={d_value:.4f} "
                    f"({elapsed:.0f}s elapsed)", file=sys.stderr)
            if step % config.checkpoint_interval == 0 and step != config.total_steps:
                save_checkpoint(state, out_dir / f"checkpoint_step{step:06d}.ckpt")

    ckpt_path = save_checkpoint(state, out_dir / "checkpoint.ckpt")
    return TrainingResult(state, reports, ckpt_path, log_path)
