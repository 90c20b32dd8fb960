"""Recognition-via-generation evaluation and qualitative exports.

Rank-1 identification: each probe is frontalized (zero noise, so results
are deterministic), embedded, and assigned the gallery identity with the
highest cosine similarity.  A raw-profile baseline embeds the
canonicalized profile directly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import DatasetManifest, canonicalize_flip, load_sample
from .embedder import EmbedderModel
from .errors import ValidationError
from .training import TrainerState
from .validation import to_image, to_tensor


@dataclass
class RecognitionResult:
    per_yaw: dict                 # |yaw| -> rank-1 accuracy of synthesized frontals
    baseline_per_yaw: dict        # |yaw| -> rank-1 accuracy of raw profiles
    num_probes: int
    num_gallery: int
    overall: float
    baseline_overall: float
    per_yaw_counts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_probes": self.num_probes,
                "num_gallery": self.num_gallery,
                "overall": self.overall,
                "baseline_overall": self.baseline_overall,
                "per_yaw": {str(k): v for k, v in sorted(self.per_yaw.items())},
                "baseline_per_yaw": {
                    str(k): v for k, v in sorted(self.baseline_per_yaw.items())},
                "per_yaw_counts": {
                    str(k): v for k, v in sorted(self.per_yaw_counts.items())},
            },
            indent=1, sort_keys=True)

    def accuracy_at(self, min_abs_yaw: int, baseline: bool = False) -> float:
        """Pooled rank-1 accuracy over probes with |yaw| >= min_abs_yaw."""
        table = self.baseline_per_yaw if baseline else self.per_yaw
        hits = total = 0
        for yaw, acc in table.items():
            if yaw >= min_abs_yaw:
                n = self.per_yaw_counts[yaw]
                hits += acc * n
                total += n
        if total == 0:
            raise ValidationError(f"no probes with |yaw| >= {min_abs_yaw}")
        return hits / total


def _l2_normalize(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return x / norms


def synthesize_frontal(state: TrainerState, sample) -> np.ndarray:
    """Frontalize one canonicalized sample with zero noise; (H, W, 3) array."""
    sample = canonicalize_flip(sample)
    state.generator.eval()
    with torch.no_grad():
        out = state.generator.synthesize(
            to_tensor(sample.profile_image),
            np.asarray(sample.landmarks_profile)[None],
            torch.zeros(1, state.generator.noise_dim),
        )
    return to_image(out.fused_image)


def frontalize_image(state: TrainerState, image, landmarks, yaw: int = 0) -> np.ndarray:
    """Frontalize a single (H, W, 3) image given its landmarks.

    `yaw` is only used to decide the canonicalizing flip (negative yaw
    means the occluded half is on the image's left).
    """
    from .data import FaceSample  # local import to avoid cycle at module load

    sample = FaceSample(
        profile_image=np.asarray(image, dtype=np.float32),
        frontal_image=np.asarray(image, dtype=np.float32),
        landmarks_profile=np.asarray(landmarks, dtype=np.int64).reshape(4, 2),
        identity=0,
        yaw_degrees=int(yaw),
    ).validate()
    return synthesize_frontal(state, sample)


def rank1_eval(state: TrainerState, embedder: EmbedderModel,
               probe_manifest: DatasetManifest, gallery_manifest: DatasetManifest,
               train_manifest: DatasetManifest | None = None) -> RecognitionResult:
    gallery = [load_sample(gallery_manifest, i)
               for i in range(len(gallery_manifest.records))]
    frontal_of = {}
    for s in gallery:
        if s.yaw_degrees != 0:
            raise ValidationError(
                f"gallery contains a non-frontal sample (identity {s.identity})")
        if s.identity in frontal_of:
            raise ValidationError(
                f"gallery contains identity {s.identity} more than once")
        frontal_of[s.identity] = s

    probes = [load_sample(probe_manifest, i)
              for i in range(len(probe_manifest.records))]
    probe_ids = {s.identity for s in probes}
    missing = probe_ids - set(frontal_of)
    if missing:
        raise ValidationError(f"probe identities missing from gallery: {sorted(missing)}")
    if train_manifest is not None:
        overlap = probe_ids & {r.identity for r in train_manifest.records}
        if overlap:
            raise ValidationError(
                f"probe identities overlap the training set: {sorted(overlap)}")

    gallery_ids = sorted(frontal_of)
    gallery_emb = _l2_normalize(embedder.embed_array(
        np.stack([frontal_of[i].frontal_image for i in gallery_ids])))

    synth_images = np.stack([synthesize_frontal(state, s) for s in probes])
    raw_images = np.stack(
        [canonicalize_flip(s).profile_image for s in probes])
    synth_emb = _l2_normalize(embedder.embed_array(synth_images))
    raw_emb = _l2_normalize(embedder.embed_array(raw_images))

    gallery_arr = np.asarray(gallery_ids)
    synth_pred = gallery_arr[np.argmax(synth_emb @ gallery_emb.T, axis=1)]
    raw_pred = gallery_arr[np.argmax(raw_emb @ gallery_emb.T, axis=1)]
    truth = np.asarray([s.identity for s in probes])
    yaws = np.asarray([abs(s.yaw_degrees) for s in probes])

    per_yaw, baseline_per_yaw, counts = {}, {}, {}
    for yaw in sorted(set(yaws.tolist())):
        mask = yaws == yaw
        counts[yaw] = int(mask.sum())
        per_yaw[yaw] = float((synth_pred[mask] == truth[mask]).mean())
        baseline_per_yaw[yaw] = float((raw_pred[mask] == truth[mask]).mean())

    return RecognitionResult(
        per_yaw=per_yaw,
        baseline_per_yaw=baseline_per_yaw,
        num_probes=len(probes),
        num_gallery=len(gallery_ids),
        overall=float((synth_pred == truth).mean()),
        baseline_overall=float((raw_pred == truth).mean()),
        per_yaw_counts=counts,
    )


def principal_projection(features: np.ndarray, dims: int = 2) -> np.ndarray:
    """Deterministic PCA projection (sign fixed by each component's largest loading)."""
    centered = features - features.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:dims]
    for k in range(comps.shape[0]):
        pivot = np.argmax(np.abs(comps[k]))
        if comps[k, pivot] < 0:
            comps[k] = -comps[k]
    return centered @ comps.T


def export_embeddings(entries, embedder: EmbedderModel, out_path,
                      include_projection: bool = True) -> Path:
    """Write one CSV row per entry: identity, yaw, source, 256 features.

    `entries` is an iterable of (image, identity, yaw, source) where source
    tags the image's origin ("profile" | "synthesized" | "frontal").
    """
    entries = list(entries)
    if not entries:
        raise ValidationError("export_embeddings: no entries")
    images = np.stack([e[0] for e in entries])
    emb = embedder.embed_array(images)
    proj = None
    if include_projection and len(entries) >= 2:
        proj = principal_projection(emb, dims=2)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["identity", "yaw", "source"] + [f"f{k:03d}" for k in range(emb.shape[1])]
        if proj is not None:
            header += ["pc1", "pc2"]
        writer.writerow(header)
        for row, (_, identity, yaw, source) in enumerate(entries):
            record = [identity, yaw, source] + [repr(float(v)) for v in emb[row]]
            if proj is not None:
                record += [repr(float(proj[row, 0])), repr(float(proj[row, 1]))]
            writer.writerow(record)
    return out_path


def emit_image_grid(samples, state: TrainerState, out_path, gutter: int = 2) -> Path:
    """Tiled comparison image: one row per sample, columns
    profile | synthesized | ground-truth frontal."""
    samples = list(samples)
    if not samples:
        raise ValidationError("emit_image_grid: no samples")
    rows = []
    for s in samples:
        canon = canonicalize_flip(s)
        synth = synthesize_frontal(state, s)
        rows.append([canon.profile_image, synth, canon.frontal_image])

    h, w, _ = rows[0][0].shape
    grid_h = len(rows) * h + (len(rows) - 1) * gutter
    grid_w = 3 * w + 2 * gutter
    canvas = np.ones((grid_h, grid_w, 3), dtype=np.float32)
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            y0 = r * (h + gutter)
            x0 = c * (w + gutter)
            canvas[y0:y0 + h, x0:x0 + w] = img

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    data = np.round(np.clip(canvas, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(out_path, format="PNG")
    return out_path
