"""Two-pathway frontalization generator.

A global encoder/decoder with skip connections and a bottleneck identity
vector handles the whole face; four independent per-landmark encoder/
decoders handle local texture.  Local features are placed at template
landmark positions, max-fused, and concatenated into the decoder's final
convolution stack.

A width multiplier scales every hidden channel count (input/output
channels and the noise dimension are fixed); layer geometry is unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ValidationError
from .patches import DEFAULT_PATCH_SPECS, crop_patches, place_and_fuse
from .validation import NOISE_DIM, check_image_tensor, check_noise

ENCODER_SLOPE = 0.2  # leaky slope in encoders; decoders use plain ReLU


def scaled(channels: int, multiplier: float) -> int:
    return max(1, int(round(channels * multiplier)))


def max_out_halves(t: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Elementwise max of the two halves of `t` along `dim`."""
    n = t.shape[dim]
    if n % 2:
        raise ValidationError(f"max_out_halves: dimension {dim} has odd size {n}")
    a, b = torch.chunk(t, 2, dim=dim)
    return torch.maximum(a, b)


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with an identity shortcut, channel preserving."""

    def __init__(self, channels: int, slope: float = 0.0):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.bn2 = nn.BatchNorm2d(channels)
        self.slope = slope

    def forward(self, x):
        h = F.leaky_relu(self.bn1(self.conv1(x)), self.slope)
        h = self.bn2(self.conv2(h))
        return F.leaky_relu(x + h, self.slope)


class GlobalEncoder(nn.Module):
    """Downsampling stack 128 -> 8 with a max-out bottleneck vector."""

    def __init__(self, width_multiplier: float = 1.0):
        super().__init__()
        m = width_multiplier
        c64, c128, c256, c512 = (scaled(c, m) for c in (64, 128, 256, 512))
        fc_dim = scaled(512, m)
        if fc_dim % 2:
            raise ValidationError(f"width multiplier {m} gives odd bottleneck size {fc_dim}")
        self.vid_dim = fc_dim // 2
        self.channels = {"conv0": c64, "conv1": c64, "conv2": c128, "conv3": c256, "conv4": c512}

        self.conv0 = nn.Conv2d(3, c64, 7, 1, 3)
        self.bn0 = nn.BatchNorm2d(c64)
        self.res0 = ResidualBlock(c64, ENCODER_SLOPE)
        self.conv1 = nn.Conv2d(c64, c64, 5, 2, 2)
        self.bn1 = nn.BatchNorm2d(c64)
        self.res1 = ResidualBlock(c64, ENCODER_SLOPE)
        self.conv2 = nn.Conv2d(c64, c128, 3, 2, 1)
        self.bn2 = nn.BatchNorm2d(c128)
        self.res2 = ResidualBlock(c128, ENCODER_SLOPE)
        self.conv3 = nn.Conv2d(c128, c256, 3, 2, 1)
        self.bn3 = nn.BatchNorm2d(c256)
        self.res3 = ResidualBlock(c256, ENCODER_SLOPE)
        self.conv4 = nn.Conv2d(c256, c512, 3, 2, 1)
        self.bn4 = nn.BatchNorm2d(c512)
        self.res4 = nn.Sequential(*[ResidualBlock(c512, ENCODER_SLOPE) for _ in range(4)])
        self.fc1 = nn.Linear(8 * 8 * c512, fc_dim)

    def forward(self, x):
        x = check_image_tensor(x, name="encoder input")
        f0 = self.res0(F.leaky_relu(self.bn0(self.conv0(x)), ENCODER_SLOPE))
        f1 = self.res1(F.leaky_relu(self.bn1(self.conv1(f0)), ENCODER_SLOPE))
        f2 = self.res2(F.leaky_relu(self.bn2(self.conv2(f1)), ENCODER_SLOPE))
        f3 = self.res3(F.leaky_relu(self.bn3(self.conv3(f2)), ENCODER_SLOPE))
        f4 = self.res4(F.leaky_relu(self.bn4(self.conv4(f3)), ENCODER_SLOPE))
        v_id = max_out_halves(self.fc1(f4.flatten(1)), dim=-1)
        skips = {"conv0": f0, "conv1": f1, "conv2": f2, "conv3": f3, "conv4": f4}
        return skips, v_id


class GlobalDecoder(nn.Module):
    """Upsampling stack with skip inputs, a noise branch, and output heads.

    Every auxiliary input (encoder skips, noise-branch maps, the fused
    local canvas, resized copies of the input) passes through one residual
    block before concatenation.
    """

    def __init__(self, width_multiplier: float = 1.0, noise_dim: int = NOISE_DIM):
        super().__init__()
        m = width_multiplier
        c64, c128, c256, c512 = (scaled(c, m) for c in (64, 128, 256, 512))
        f64, f32, f16, f8 = (scaled(c, m) for c in (64, 32, 16, 8))
        self.noise_dim = noise_dim
        vid_dim = scaled(512, m) // 2
        self.local_channels = c64

        self.fc_feat8 = nn.Linear(vid_dim + noise_dim, 8 * 8 * f64)
        self.bn_feat8 = nn.BatchNorm2d(f64)
        self.feat32 = nn.ConvTranspose2d(f64, f32, 3, 4, 1, output_padding=3)
        self.bn_feat32 = nn.BatchNorm2d(f32)
        self.feat64 = nn.ConvTranspose2d(f32, f16, 3, 2, 1, output_padding=1)
        self.bn_feat64 = nn.BatchNorm2d(f16)
        self.feat128 = nn.ConvTranspose2d(f16, f8, 3, 2, 1, output_padding=1)
        self.bn_feat128 = nn.BatchNorm2d(f8)

        self.res_conv4 = ResidualBlock(c512)
        self.res_conv3 = ResidualBlock(c256)
        self.res_feat32 = ResidualBlock(f32)
        self.res_conv2 = ResidualBlock(c128)
        self.res_ip32 = ResidualBlock(3)
        self.res_feat64 = ResidualBlock(f16)
        self.res_conv1 = ResidualBlock(c64)
        self.res_ip64 = ResidualBlock(3)
        self.res_feat128 = ResidualBlock(f8)
        self.res_conv0 = ResidualBlock(c64)
        self.res_local = ResidualBlock(c64)
        self.res_ip128 = ResidualBlock(3)

        self.deconv0 = nn.ConvTranspose2d(f64 + c512, c512, 3, 2, 1, output_padding=1)
        self.bn_d0 = nn.BatchNorm2d(c512)
        self.deconv1 = nn.ConvTranspose2d(c512 + c256, c256, 3, 2, 1, output_padding=1)
        self.bn_d1 = nn.BatchNorm2d(c256)
        self.deconv2 = nn.ConvTranspose2d(c256 + f32 + c128 + 3, c128, 3, 2, 1, output_padding=1)
        self.bn_d2 = nn.BatchNorm2d(c128)
        self.deconv3 = nn.ConvTranspose2d(c128 + f16 + c64 + 3, c64, 3, 2, 1, output_padding=1)
        self.bn_d3 = nn.BatchNorm2d(c64)
        self.conv5 = nn.Conv2d(c64 + f8 + c64 + c64 + 3, c64, 5, 1, 2)
        self.bn5 = nn.BatchNorm2d(c64)
        self.conv6 = nn.Conv2d(c64, scaled(32, m), 3, 1, 1)
        self.bn6 = nn.BatchNorm2d(scaled(32, m))
        self.conv7 = nn.Conv2d(scaled(32, m), 3, 3, 1, 1)

        self.head_global = nn.Conv2d(c64, 3, 3, 1, 1)
        self.head_ms32 = nn.Conv2d(c256, 3, 3, 1, 1)
        self.head_ms64 = nn.Conv2d(c128, 3, 3, 1, 1)

    def forward(self, v_id, noise, skips, local_canvas, profile):
        noise = check_noise(noise, self.noise_dim).to(v_id.dtype)
        profile = check_image_tensor(profile, name="decoder profile input")
        if local_canvas.shape[1] != self.local_channels:
            raise ValidationError(
                f"local canvas has {local_canvas.shape[1]} channels, "
                f"expected {self.local_channels}"
            )
        if noise.shape[0] != v_id.shape[0]:
            raise ValidationError("noise batch size does not match v_id")

        h = self.fc_feat8(torch.cat([v_id, noise], dim=1))
        feat8 = F.relu(self.bn_feat8(h.view(h.shape[0], -1, 8, 8)))
        feat32 = F.relu(self.bn_feat32(self.feat32(feat8)))
        feat64 = F.relu(self.bn_feat64(self.feat64(feat32)))
        feat128 = F.relu(self.bn_feat128(self.feat128(feat64)))

        ip32 = F.interpolate(profile, size=(32, 32), mode="bilinear", align_corners=False)
        ip64 = F.interpolate(profile, size=(64, 64), mode="bilinear", align_corners=False)

        d0 = F.relu(self.bn_d0(self.deconv0(
            torch.cat([feat8, self.res_conv4(skips["conv4"])], dim=1))))
        d1 = F.relu(self.bn_d1(self.deconv1(
            torch.cat([d0, self.res_conv3(skips["conv3"])], dim=1))))
        ms32 = torch.sigmoid(self.head_ms32(d1))
        d2 = F.relu(self.bn_d2(self.deconv2(torch.cat(
            [d1, self.res_feat32(feat32), self.res_conv2(skips["conv2"]),
             self.res_ip32(ip32)], dim=1))))
        ms64 = torch.sigmoid(self.head_ms64(d2))
        d3 = F.relu(self.bn_d3(self.deconv3(torch.cat(
            [d2, self.res_feat64(feat64), self.res_conv1(skips["conv1"]),
             self.res_ip64(ip64)], dim=1))))
        global_image = torch.sigmoid(self.head_global(d3))
        c5 = F.relu(self.bn5(self.conv5(torch.cat(
            [d3, self.res_feat128(feat128), self.res_conv0(skips["conv0"]),
             self.res_local(local_canvas), self.res_ip128(profile)], dim=1))))
        c6 = F.relu(self.bn6(self.conv6(c5)))
        fused = torch.sigmoid(self.conv7(c6))
        return fused, global_image, (ms32, ms64)


class _LocalEncoder(nn.Module):
    def __init__(self, m: float):
        super().__init__()
        c64, c128, c256, c512 = (scaled(c, m) for c in (64, 128, 256, 512))
        self.conv0 = nn.Conv2d(3, c64, 3, 1, 1)
        self.bn0 = nn.BatchNorm2d(c64)
        self.conv1 = nn.Conv2d(c64, c128, 3, 2, 1)
        self.bn1 = nn.BatchNorm2d(c128)
        self.conv2 = nn.Conv2d(c128, c256, 3, 2, 1)
        self.bn2 = nn.BatchNorm2d(c256)
        self.conv3 = nn.Conv2d(c256, c512, 3, 2, 1)
        self.bn3 = nn.BatchNorm2d(c512)

    def forward(self, x):
        f0 = F.leaky_relu(self.bn0(self.conv0(x)), ENCODER_SLOPE)
        f1 = F.leaky_relu(self.bn1(self.conv1(f0)), ENCODER_SLOPE)
        f2 = F.leaky_relu(self.bn2(self.conv2(f1)), ENCODER_SLOPE)
        f3 = F.leaky_relu(self.bn3(self.conv3(f2)), ENCODER_SLOPE)
        return f0, f1, f2, f3


class _LocalDecoder(nn.Module):
    def __init__(self, m: float):
        super().__init__()
        c64, c128, c256, c512 = (scaled(c, m) for c in (64, 128, 256, 512))
        self.deconv0 = nn.ConvTranspose2d(c512, c256, 3, 2, 1, output_padding=1)
        self.bn_d0 = nn.BatchNorm2d(c256)
        self.deconv1 = nn.ConvTranspose2d(c256 + c256, c128, 3, 2, 1, output_padding=1)
        self.bn_d1 = nn.BatchNorm2d(c128)
        self.deconv2 = nn.ConvTranspose2d(c128 + c128, c64, 3, 2, 1, output_padding=1)
        self.bn_d2 = nn.BatchNorm2d(c64)
        self.conv4 = nn.Conv2d(c64 + c64, c64, 3, 1, 1)
        self.bn4 = nn.BatchNorm2d(c64)
        self.conv5 = nn.Conv2d(c64, 3, 3, 1, 1)

    def forward(self, f0, f1, f2, f3):
        d0 = F.relu(self.bn_d0(self.deconv0(f3)))
        d1 = F.relu(self.bn_d1(self.deconv1(torch.cat([d0, f2], dim=1))))
        d2 = F.relu(self.bn_d2(self.deconv2(torch.cat([d1, f1], dim=1))))
        feature = F.relu(self.bn4(self.conv4(torch.cat([d2, f0], dim=1))))
        image = torch.sigmoid(self.conv5(feature))
        return image, feature


class LocalPathway(nn.Module):
    """Encoder/decoder for one landmark patch; no fully connected bottleneck."""

    def __init__(self, width_multiplier: float, width: int, height: int):
        super().__init__()
        self.patch_width = width
        self.patch_height = height
        self.enc = _LocalEncoder(width_multiplier)
        self.dec = _LocalDecoder(width_multiplier)

    def forward(self, patch):
        if patch.dim() != 4 or patch.shape[1] != 3 or \
                patch.shape[-2:] != (self.patch_height, self.patch_width):
            raise ValidationError(
                f"local pathway expects (N, 3, {self.patch_height}, {self.patch_width}), "
                f"got {tuple(patch.shape)}"
            )
        return self.dec(*self.enc(patch))


@dataclass
class GeneratorOutput:
    """Everything the generator produces for one batch."""

    fused_image: torch.Tensor          # (N, 3, 128, 128) in [0, 1]
    global_image: torch.Tensor         # (N, 3, 128, 128)
    local_images: dict                 # {patch name: (N, 3, h, w)}; empty if disabled
    multiscale_images: tuple           # ((N, 3, 32, 32), (N, 3, 64, 64))
    identity_vector: torch.Tensor      # (N, vid_dim)
    local_feature_canvas: torch.Tensor  # (N, C, 128, 128)
    local_features: dict = field(default_factory=dict)


class TwoPathwayGenerator(nn.Module):
    def __init__(self, width_multiplier: float = 1.0, noise_dim: int = NOISE_DIM,
                 patch_specs=DEFAULT_PATCH_SPECS, use_local_pathway: bool = True):
        super().__init__()
        if width_multiplier <= 0:
            raise ValidationError(f"width multiplier must be > 0, got {width_multiplier}")
        self.width_multiplier = width_multiplier
        self.noise_dim = noise_dim
        self.patch_specs = tuple(patch_specs)
        self.use_local_pathway = use_local_pathway
        self.global_enc = GlobalEncoder(width_multiplier)
        self.global_dec = GlobalDecoder(width_multiplier, noise_dim)
        self.local_paths = nn.ModuleDict({
            spec.name: LocalPathway(width_multiplier, spec.width, spec.height)
            for spec in self.patch_specs
        })

    @property
    def vid_dim(self) -> int:
        return self.global_enc.vid_dim

    def encode_global(self, profile):
        return self.global_enc(profile)

    def decode_global(self, v_id, noise, skips, local_canvas, profile):
        return self.global_dec(v_id, noise, skips, local_canvas, profile)

    def forward_local(self, patches: dict):
        images, features = {}, {}
        for spec in self.patch_specs:
            if spec.name not in patches:
                raise ValidationError(f"missing patch {spec.name!r}")
            img, feat = self.local_paths[spec.name](patches[spec.name])
            images[spec.name] = img
            features[spec.name] = feat
        return images, features

    def synthesize(self, profile, landmarks, noise) -> GeneratorOutput:
        """Full forward pass: crop -> local nets -> fuse -> encode -> decode."""
        profile = check_image_tensor(profile, name="profile")
        n = profile.shape[0]
        if self.use_local_pathway:
            patches = crop_patches(profile, landmarks, self.patch_specs)
            local_images, local_features = self.forward_local(patches)
            canvas = place_and_fuse(local_features, self.patch_specs, profile.shape[-2:])
        else:
            local_images, local_features = {}, {}
            canvas = profile.new_zeros(
                (n, self.global_dec.local_channels, *profile.shape[-2:]))
        skips, v_id = self.encode_global(profile)
        fused, global_image, multiscale = self.decode_global(
            v_id, noise, skips, canvas, profile)
        return GeneratorOutput(
            fused_image=fused,
            global_image=global_image,
            local_images=local_images,
            multiscale_images=multiscale,
            identity_vector=v_id,
            local_feature_canvas=canvas,
            local_features=local_features,
        )

    def forward(self, profile, landmarks, noise):
        return self.synthesize(profile, landmarks, noise)


def init_parameters(module: nn.Module, seed: int) -> None:
    """Deterministic DCGAN-style initialization from a private generator."""
    g = torch.Generator().manual_seed(int(seed))
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            m.weight.data.normal_(0.0, 0.02, generator=g)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm1d)):
            m.weight.data.normal_(1.0, 0.02, generator=g)
            m.bias.data.zero_()
