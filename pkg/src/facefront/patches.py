"""Landmark patch geometry: cropping, template placement, max-out fusion.

Boxes follow the half-open rule in 1-indexed label space: a patch of width
w centered on label cx covers labels [cx - w/2, cx + w/2), i.e. array
columns [cx - w/2 - 1, cx + w/2 - 1).  The same rule is used for cropping
and placement, so placing a patch and cropping it back is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ValidationError
from .validation import IMAGE_SIZE, LANDMARK_NAMES


@dataclass(frozen=True)
class PatchSpec:
    name: str
    width: int
    height: int
    template_center: tuple  # (x, y) label on the frontal canvas

    def __post_init__(self):
        if self.width % 8 or self.height % 8:
            raise ValidationError(
                f"patch {self.name}: width and height must be divisible by 8, "
                f"got {self.width}x{self.height}"
            )


# Template centers are a canonical frontal layout; only the box rule is
# contractual, the coordinates are configurable.
DEFAULT_PATCH_SPECS = (
    PatchSpec("left_eye", 40, 40, (40, 52)),
    PatchSpec("right_eye", 40, 40, (88, 52)),
    PatchSpec("nose", 40, 32, (64, 76)),
    PatchSpec("mouth", 48, 32, (64, 100)),
)


def box_slices(center_xy, width: int, height: int, canvas_hw=(IMAGE_SIZE, IMAGE_SIZE)):
    """(row_slice, col_slice) of the box around a 1-indexed (x, y) label."""
    cx, cy = int(center_xy[0]), int(center_xy[1])
    c0 = cx - width // 2 - 1
    r0 = cy - height // 2 - 1
    h, w = canvas_hw
    if c0 < 0 or r0 < 0 or c0 + width > w or r0 + height > h:
        raise ValidationError(
            f"{width}x{height} box at label ({cx}, {cy}) leaves the {w}x{h} canvas"
        )
    return slice(r0, r0 + height), slice(c0, c0 + width)


def _check_batched(image: torch.Tensor, what: str) -> tuple:
    if not torch.is_tensor(image):
        raise ValidationError(f"{what}: expected a torch tensor")
    squeeze = image.dim() == 3
    if squeeze:
        image = image.unsqueeze(0)
    if image.dim() != 4:
        raise ValidationError(f"{what}: expected (N, C, H, W), got {tuple(image.shape)}")
    return image, squeeze


def crop_patches(image: torch.Tensor, landmarks, specs=DEFAULT_PATCH_SPECS) -> dict:
    """Crop one patch per spec, centered on the given landmarks.

    `image` is (N, C, H, W) or (C, H, W); `landmarks` is (N, 4, 2) or (4, 2)
    in (x, y) label order matching `specs`.  Returns {name: (N, C, h, w)}.
    """
    image, squeeze = _check_batched(image, "crop_patches")
    lm = np.asarray(landmarks, dtype=np.int64)
    if lm.ndim == 2:
        lm = lm[None]
    if lm.shape != (image.shape[0], len(specs), 2):
        raise ValidationError(
            f"landmarks: expected shape ({image.shape[0]}, {len(specs)}, 2), got {lm.shape}"
        )
    out = {}
    hw = image.shape[-2:]
    for k, spec in enumerate(specs):
        crops = []
        for n in range(image.shape[0]):
            rs, cs = box_slices(lm[n, k], spec.width, spec.height, hw)
            crops.append(image[n, :, rs, cs])
        patch = torch.stack(crops, dim=0)
        out[spec.name] = patch[0] if squeeze else patch
    return out


def template_crop_frontal(frontal: torch.Tensor, specs=DEFAULT_PATCH_SPECS) -> dict:
    """Crop the frontal canvas at the template centers (same box rule)."""
    frontal, squeeze = _check_batched(frontal, "template_crop_frontal")
    out = {}
    hw = frontal.shape[-2:]
    for spec in specs:
        rs, cs = box_slices(spec.template_center, spec.width, spec.height, hw)
        patch = frontal[:, :, rs, cs]
        out[spec.name] = patch[0] if squeeze else patch
    return out


def place_and_fuse(local_maps: dict, specs=DEFAULT_PATCH_SPECS,
                   canvas_size=(IMAGE_SIZE, IMAGE_SIZE)) -> torch.Tensor:
    """Write each map at its template box and max-fuse overlaps.

    Where k >= 2 boxes overlap the result is the elementwise max of the
    contributors; where exactly one box covers it is that contributor's
    value (even if negative); uncovered cells are 0.
    """
    if not local_maps:
        raise ValidationError("place_and_fuse: no maps given")
    maps = []
    squeeze = None
    for spec in specs:
        if spec.name not in local_maps:
            raise ValidationError(f"place_and_fuse: missing map for {spec.name!r}")
        m, sq = _check_batched(local_maps[spec.name], f"map {spec.name!r}")
        if squeeze is None:
            squeeze = sq
        if m.shape[-2:] != (spec.height, spec.width):
            raise ValidationError(
                f"map {spec.name!r}: expected {spec.height}x{spec.width}, "
                f"got {tuple(m.shape[-2:])}"
            )
        maps.append(m)
    n, c = maps[0].shape[0], maps[0].shape[1]
    for spec, m in zip(specs, maps):
        if m.shape[0] != n or m.shape[1] != c:
            raise ValidationError(
                f"map {spec.name!r}: batch/channel mismatch "
                f"({tuple(m.shape[:2])} vs ({n}, {c}))"
            )

    neg_inf = torch.finfo(maps[0].dtype).min
    fused = maps[0].new_full((n, c, *canvas_size), neg_inf)
    for spec, m in zip(specs, maps):
        rs, cs = box_slices(spec.template_center, spec.width, spec.height, canvas_size)
        placed = maps[0].new_full((n, c, *canvas_size), neg_inf)
        placed[:, :, rs, cs] = m
        fused = torch.maximum(fused, placed)
    fused = torch.where(fused == neg_inf, fused.new_zeros(()), fused)
    return fused[0] if squeeze else fused
