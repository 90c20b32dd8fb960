"""Synthetic paired profile/frontal face dataset.

A parametric renderer draws one face per identity (ellipse head, eye, nose
and mouth glyphs whose geometry and colors are drawn from a per-identity
seeded RNG).  Non-frontal views are produced by a horizontal perspective
shear that compresses the half of the face turning away from the camera
and hides far-side features at extreme angles; landmark coordinates come
from the same analytic geometry, so they are exact by construction.

Positive yaw puts the occluded half on the image's right side; negative
yaws are rendered as the horizontal mirror of the corresponding positive
yaw.  `canonicalize_flip` undoes that mirror so downstream consumers only
ever see occlusion-right inputs.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ManifestError, ValidationError
from .validation import (
    IMAGE_SIZE,
    LANDMARK_MARGIN,
    check_image,
    check_landmarks,
    mirror_x,
)

ALLOWED_YAWS = (0, 15, 30, 45, 60, 75, 90)

# Horizontal shear parameters: per unit of t = yaw/90 the near half keeps
# (1 - NEAR_SQUEEZE*t) of its width, the far half (1 - FAR_SQUEEZE*t), and
# the whole face slides AXIS_SHIFT*t px toward the occluded side.
AXIS = (IMAGE_SIZE - 1) / 2.0  # 63.5, the frontal symmetry axis in array coords
NEAR_SQUEEZE = 0.30
FAR_SQUEEZE = 0.85
AXIS_SHIFT = 8.0
# Far-side glyphs disappear behind the silhouette once their half of the
# face is compressed below this factor (true for |yaw| >= 75 here).
OCCLUSION_SCALE = 0.35

BACKGROUND = np.array([0.10, 0.11, 0.13], dtype=np.float64)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass
class FaceSample:
    """One training/eval record: a profile view paired with its frontal view."""

    profile_image: np.ndarray      # (128, 128, 3) float32 in [0, 1]
    frontal_image: np.ndarray      # same shape/range
    landmarks_profile: np.ndarray  # (4, 2) int labels: left_eye, right_eye, nose, mouth
    identity: int
    yaw_degrees: int
    occluded_side: str = "none"    # "left" | "right" | "none"

    def validate(self) -> "FaceSample":
        check_image(self.profile_image, name="profile_image")
        check_image(self.frontal_image, name="frontal_image")
        if self.profile_image.shape != self.frontal_image.shape:
            raise ValidationError("profile and frontal images must have identical shape")
        check_landmarks(self.landmarks_profile)
        if self.identity < 0:
            raise ValidationError(f"identity must be non-negative, got {self.identity}")
        if abs(self.yaw_degrees) not in ALLOWED_YAWS:
            raise ValidationError(f"yaw {self.yaw_degrees} not in ±{ALLOWED_YAWS}")
        return self


@dataclass
class SampleRecord:
    path_profile: str
    path_frontal: str
    identity: int
    yaw: int
    landmarks: list   # 8 ints: x1 y1 x2 y2 x3 y3 x4 y4
    occluded_side: str


@dataclass
class DatasetManifest:
    records: list
    split: str
    num_identities: int
    root: Path = field(default=Path("."), compare=False)
    image_size: int = IMAGE_SIZE

    def identities(self) -> set:
        return {r.identity for r in self.records}

    def to_json(self) -> str:
        payload = {
            "format_version": MANIFEST_VERSION,
            "split": self.split,
            "num_identities": self.num_identities,
            "image_size": self.image_size,
            "records": [dataclasses.asdict(r) for r in self.records],
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        path = out_dir / MANIFEST_NAME
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.is_file():
            raise ManifestError(f"no manifest at {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ManifestError(f"malformed manifest {path}: {e}") from e
        if payload.get("format_version") != MANIFEST_VERSION:
            raise ManifestError(
                f"manifest {path}: unsupported format_version {payload.get('format_version')}"
            )
        records = [SampleRecord(**r) for r in payload["records"]]
        return cls(
            records=records,
            split=payload["split"],
            num_identities=payload["num_identities"],
            root=path.parent,
            image_size=payload.get("image_size", IMAGE_SIZE),
        )


# ---------------------------------------------------------------------------
# Parametric renderer
# ---------------------------------------------------------------------------

def _rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, path)])))


@dataclass
class IdentityParams:
    face_rx: float
    face_ry: float
    face_cy: float
    skin: np.ndarray
    hair: np.ndarray
    hair_y: float          # array row of the hairline
    eye_dx: int            # frontal eye labels are 64 - eye_dx and 65 + eye_dx
    eye_y: int             # label row of the eye centers
    eye_rx: float
    eye_ry: float
    sclera: np.ndarray
    iris: np.ndarray
    iris_r: float
    brow_dy: float
    brow_rx: float
    brow_ry: float
    nose_tip_y: int        # label row of the nose tip
    nose_rx: float
    nose_ry: float
    mouth_y: int           # label row of the mouth center
    mouth_rx: float
    mouth_ry: float
    lips: np.ndarray


def identity_params(seed: int, identity: int) -> IdentityParams:
    rng = _rng(seed, 0xFACE, identity)
    skin = np.array([rng.uniform(0.62, 0.88), rng.uniform(0.45, 0.68), rng.uniform(0.38, 0.58)])
    eye_y = int(rng.integers(51, 55))
    return IdentityParams(
        face_rx=rng.uniform(38.0, 44.0),
        face_ry=rng.uniform(50.0, 56.0),
        face_cy=rng.uniform(62.0, 68.0),
        skin=skin,
        hair=rng.uniform(0.05, 0.45, size=3),
        hair_y=eye_y - 1 - rng.uniform(12.0, 17.0),
        eye_dx=int(rng.integers(23, 26)),
        eye_y=eye_y,
        eye_rx=rng.uniform(6.0, 9.0),
        eye_ry=rng.uniform(4.0, 6.0),
        sclera=rng.uniform(0.90, 0.96, size=3),
        iris=rng.uniform(0.05, 0.60, size=3),
        iris_r=rng.uniform(2.4, 3.8),
        brow_dy=rng.uniform(7.0, 10.0),
        brow_rx=rng.uniform(7.0, 10.0),
        brow_ry=rng.uniform(1.2, 2.2),
        nose_tip_y=int(rng.integers(74, 80)),
        nose_rx=rng.uniform(3.5, 5.5),
        nose_ry=rng.uniform(9.0, 13.0),
        mouth_y=int(rng.integers(98, 103)),
        mouth_rx=rng.uniform(10.0, 14.0),
        mouth_ry=rng.uniform(3.0, 5.0),
        lips=np.array([rng.uniform(0.50, 0.75), rng.uniform(0.08, 0.22), rng.uniform(0.12, 0.30)]),
    )


def _warp_coeffs(yaw: int):
    t = abs(yaw) / 90.0
    return 1.0 - NEAR_SQUEEZE * t, 1.0 - FAR_SQUEEZE * t, AXIS + AXIS_SHIFT * t


def warp_x(u, yaw: int):
    """Frontal array x -> sheared array x for a canonical (non-negative) yaw."""
    s_near, s_far, c = _warp_coeffs(yaw)
    u = np.asarray(u, dtype=np.float64)
    return c + (u - AXIS) * np.where(u < AXIS, s_near, s_far)


def unwarp_x(x, yaw: int):
    """Inverse of `warp_x` (the shear is piecewise linear and monotone)."""
    s_near, s_far, c = _warp_coeffs(yaw)
    d = np.asarray(x, dtype=np.float64) - c
    return AXIS + d / np.where(d < 0, s_near, s_far)


def _label(a: float) -> int:
    # array coordinate -> 1-indexed pixel label, ties to even
    return int(np.round(a + 1.0))


def render_identity(seed: int, identity: int, yaw: int):
    """Render one view analytically.

    Returns (image (128,128,3) float32, landmarks (4,2) int labels,
    occluded_side str).  Negative yaws are the exact horizontal mirror of
    the corresponding positive render.
    """
    if abs(yaw) not in ALLOWED_YAWS:
        raise ValidationError(f"yaw {yaw} not in ±{ALLOWED_YAWS}")
    p = identity_params(seed, identity)
    cyaw = abs(yaw)
    _, s_far, _ = _warp_coeffs(cyaw)
    far_hidden = s_far < OCCLUSION_SCALE

    ys, xs = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    u = unwarp_x(xs.astype(np.float64), cyaw)

    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float64)
    img[:] = BACKGROUND

    def ellipse(cx, cy, rx, ry):
        return ((u - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0

    def paint(mask, color):
        img[mask] = color

    head = ellipse(AXIS, p.face_cy, p.face_rx, p.face_ry)
    paint(head, p.skin)
    paint(head & (ys < p.hair_y), p.hair)

    eye_row = p.eye_y - 1
    left_cx = AXIS - (p.eye_dx + 0.5)
    right_cx = AXIS + (p.eye_dx + 0.5)
    brow_row = eye_row - p.brow_dy
    for cx, far in ((left_cx, False), (right_cx, True)):
        if far and far_hidden:
            continue
        paint(ellipse(cx, brow_row, p.brow_rx, p.brow_ry), p.hair * 0.8)
        paint(ellipse(cx, eye_row, p.eye_rx, p.eye_ry), p.sclera)
        paint(ellipse(cx, eye_row, p.iris_r, p.iris_r), p.iris)

    tip_row = p.nose_tip_y - 1
    paint(ellipse(AXIS, tip_row - p.nose_ry, p.nose_rx, p.nose_ry), p.skin * 0.82)
    paint(ellipse(AXIS, p.mouth_y - 1, p.mouth_rx, p.mouth_ry), p.lips)

    landmarks = np.array(
        [
            [_label(warp_x(left_cx, cyaw)), p.eye_y],
            [_label(warp_x(right_cx, cyaw)), p.eye_y],
            [_label(warp_x(AXIS, cyaw)), p.nose_tip_y],
            [_label(warp_x(AXIS, cyaw)), p.mouth_y],
        ],
        dtype=np.int64,
    )
    occluded = "none" if cyaw == 0 else "right"

    if yaw < 0:
        img = img[:, ::-1]
        landmarks = np.array(
            [
                [mirror_x(landmarks[1, 0]), landmarks[1, 1]],  # right eye becomes left
                [mirror_x(landmarks[0, 0]), landmarks[0, 1]],
                [mirror_x(landmarks[2, 0]), landmarks[2, 1]],
                [mirror_x(landmarks[3, 0]), landmarks[3, 1]],
            ],
            dtype=np.int64,
        )
        occluded = "left"

    return np.ascontiguousarray(img).astype(np.float32), landmarks, occluded


def render_sample(seed: int, identity: int, yaw: int) -> FaceSample:
    """In-memory sample: the yawed view paired with the identity's frontal."""
    profile, landmarks, occluded = render_identity(seed, identity, yaw)
    if yaw == 0:
        frontal = profile
    else:
        frontal, _, _ = render_identity(seed, identity, 0)
    return FaceSample(
        profile_image=profile,
        frontal_image=frontal,
        landmarks_profile=landmarks,
        identity=identity,
        yaw_degrees=yaw,
        occluded_side=occluded,
    ).validate()


# ---------------------------------------------------------------------------
# Dataset generation and loading
# ---------------------------------------------------------------------------

def _to_png(path: Path, image: np.ndarray) -> None:
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def _from_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as e:
        raise OSError(f"cannot read image {path}: {e}") from e
    return arr / 255.0


def generate_synthetic(
    num_identities: int,
    yaws,
    seed: int,
    out_dir,
    split: str = "train",
    first_identity: int = 0,
) -> DatasetManifest:
    """Render the dataset to `out_dir` and write its manifest.

    One frontal image is rendered per identity plus one image per non-zero
    requested yaw; a yaw-0 record reuses the frontal file as its profile.
    Deterministic down to file bytes for a fixed seed.
    """
    if num_identities < 2:
        raise ValidationError(f"need at least 2 identities, got {num_identities}")
    yaws = sorted({int(y) for y in yaws})
    if not yaws:
        raise ValidationError("need at least one yaw")
    for y in yaws:
        if abs(y) not in ALLOWED_YAWS:
            raise ValidationError(f"yaw {y} not in ±{ALLOWED_YAWS}")
    if split not in ("train", "gallery", "probe"):
        raise ValidationError(f"split must be train|gallery|probe, got {split!r}")

    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {images_dir}: {e}") from e

    records = []
    for identity in range(first_identity, first_identity + num_identities):
        frontal, frontal_lm, _ = render_identity(seed, identity, 0)
        frontal_rel = f"images/id{identity:04d}_frontal.png"
        _to_png(out_dir / frontal_rel, frontal)
        for yaw in yaws:
            if yaw == 0:
                profile_rel, landmarks, occluded = frontal_rel, frontal_lm, "none"
            else:
                profile, landmarks, occluded = render_identity(seed, identity, yaw)
                profile_rel = f"images/id{identity:04d}_yaw{yaw:+03d}.png"
                _to_png(out_dir / profile_rel, profile)
            records.append(
                SampleRecord(
                    path_profile=profile_rel,
                    path_frontal=frontal_rel,
                    identity=identity,
                    yaw=yaw,
                    landmarks=[int(v) for v in np.asarray(landmarks).reshape(-1)],
                    occluded_side=occluded,
                )
            )

    manifest = DatasetManifest(
        records=records,
        split=split,
        num_identities=num_identities,
        root=out_dir,
    )
    manifest.save(out_dir)
    return manifest


def load_sample(manifest: DatasetManifest, index: int) -> FaceSample:
    """Decode record `index` into a validated, [0, 1]-normalized sample."""
    if not 0 <= index < len(manifest.records):
        raise ValidationError(
            f"index {index} out of range for manifest with {len(manifest.records)} records"
        )
    rec = manifest.records[index]
    profile = _from_png(manifest.root / rec.path_profile)
    if rec.path_frontal == rec.path_profile:
        frontal = profile
    else:
        frontal = _from_png(manifest.root / rec.path_frontal)
    return FaceSample(
        profile_image=profile,
        frontal_image=frontal,
        landmarks_profile=np.asarray(rec.landmarks, dtype=np.int64).reshape(4, 2),
        identity=rec.identity,
        yaw_degrees=rec.yaw,
        occluded_side=rec.occluded_side,
    ).validate()


def mirror_sample(sample: FaceSample) -> FaceSample:
    """Horizontal mirror of a sample (its own inverse).

    Both images are flipped, landmark x labels are remapped through
    x -> W - (x - 1), the left/right eye rows are swapped, and the yaw
    sign is negated.
    """
    lm = sample.landmarks_profile
    flipped = np.array(
        [
            [mirror_x(lm[1, 0]), lm[1, 1]],
            [mirror_x(lm[0, 0]), lm[0, 1]],
            [mirror_x(lm[2, 0]), lm[2, 1]],
            [mirror_x(lm[3, 0]), lm[3, 1]],
        ],
        dtype=np.int64,
    )
    side = {"left": "right", "right": "left"}.get(sample.occluded_side, sample.occluded_side)
    return FaceSample(
        profile_image=np.ascontiguousarray(sample.profile_image[:, ::-1]),
        frontal_image=np.ascontiguousarray(sample.frontal_image[:, ::-1]),
        landmarks_profile=flipped,
        identity=sample.identity,
        yaw_degrees=-sample.yaw_degrees,
        occluded_side=side,
    )


def canonicalize_flip(sample: FaceSample) -> FaceSample:
    """Mirror negative-yaw samples so the occluded half is on image-right.

    Positive yaw already means occlusion-right and is returned unchanged.
    """
    if sample.yaw_degrees >= 0:
        return sample
    return mirror_sample(sample)


def load_all(manifest: DatasetManifest, canonicalize: bool = True):
    """Load every record; optionally flip-normalized.  Small datasets only."""
    samples = [load_sample(manifest, i) for i in range(len(manifest.records))]
    if canonicalize:
        samples = [canonicalize_flip(s) for s in samples]
    return samples
