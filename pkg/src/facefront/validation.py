"""Input validation helpers.

Conventions used throughout the package:

* Images on the numpy side are ``(H, W, 3)`` float arrays in ``[0, 1]``;
  on the torch side ``(N, 3, H, W)``.
* Landmark coordinates are 1-indexed pixel labels ``(x, y)`` with origin at
  the top-left pixel ``(1, 1)``, x rightward, y downward.  The label of
  array element ``[row, col]`` is ``(col + 1, row + 1)``.  A horizontal
  mirror of a width-W image maps ``x -> W - (x - 1)``.
* Landmark order is always (left_eye, right_eye, nose, mouth).
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import ValidationError

IMAGE_SIZE = 128
NUM_CHANNELS = 3
NOISE_DIM = 100
# Half the largest patch dimension (48 px mouth width); keeps every crop
# fully inside the image.
LANDMARK_MARGIN = 24

LANDMARK_NAMES = ("left_eye", "right_eye", "nose", "mouth")


def check_image(image, size: int = IMAGE_SIZE, name: str = "image") -> np.ndarray:
    """Validate an (H, W, 3) float image in [0, 1] and return it as float32."""
    arr = np.asarray(image)
    if arr.shape != (size, size, NUM_CHANNELS):
        raise ValidationError(
            f"{name}: expected shape {(size, size, NUM_CHANNELS)}, got {arr.shape}"
        )
    if not np.issubdtype(arr.dtype, np.floating):
        raise ValidationError(f"{name}: expected float pixels, got dtype {arr.dtype}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValidationError(
            f"{name}: pixel range [{arr.min():.4f}, {arr.max():.4f}] outside [0, 1]"
        )
    return arr.astype(np.float32, copy=False)


def check_image_tensor(t: torch.Tensor, size: int = IMAGE_SIZE, name: str = "image") -> torch.Tensor:
    """Validate an (N, 3, H, W) tensor; a (3, H, W) tensor gets a batch dim."""
    if not torch.is_tensor(t):
        raise ValidationError(f"{name}: expected a torch tensor, got {type(t).__name__}")
    if t.dim() == 3:
        t = t.unsqueeze(0)
    if t.dim() != 4 or t.shape[1:] != (NUM_CHANNELS, size, size):
        raise ValidationError(
            f"{name}: expected shape (N, {NUM_CHANNELS}, {size}, {size}), got {tuple(t.shape)}"
        )
    return t


def check_landmarks(landmarks, size: int = IMAGE_SIZE, margin: int = LANDMARK_MARGIN) -> np.ndarray:
    """Validate four (x, y) labels with at least `margin` px to every border."""
    arr = np.asarray(landmarks, dtype=np.int64)
    if arr.shape != (4, 2):
        raise ValidationError(f"landmarks: expected shape (4, 2), got {arr.shape}")
    lo, hi = 1 + margin, size - margin
    if arr.min() < lo or arr.max() > hi:
        raise ValidationError(
            f"landmarks {arr.tolist()} violate the {margin}px margin "
            f"(coordinates must lie in [{lo}, {hi}])"
        )
    return arr


def check_noise(noise, dim: int = NOISE_DIM) -> torch.Tensor:
    """Validate an (N, dim) or (dim,) noise tensor."""
    if not torch.is_tensor(noise):
        noise = torch.as_tensor(np.asarray(noise), dtype=torch.float32)
    if noise.dim() == 1:
        noise = noise.unsqueeze(0)
    if noise.dim() != 2 or noise.shape[1] != dim:
        raise ValidationError(
            f"noise: expected dimension {dim}, got shape {tuple(noise.shape)}"
        )
    return noise.float()


def to_tensor(image) -> torch.Tensor:
    """(H, W, 3) float array in [0, 1] -> (1, 3, H, W) float32 tensor."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise ValidationError(f"to_tensor: expected an (H, W, C) array, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).unsqueeze(0)


def to_image(t: torch.Tensor) -> np.ndarray:
    """(3, H, W) or (1, 3, H, W) tensor -> (H, W, 3) float32 array, clipped to [0, 1]."""
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ValidationError("to_image: batch size must be 1")
        t = t[0]
    arr = t.detach().cpu().numpy().transpose(1, 2, 0)
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def mirror_x(x, size: int = IMAGE_SIZE):
    """Horizontal mirror of a 1-indexed x label: x -> W - (x - 1)."""
    return size - (x - 1)
