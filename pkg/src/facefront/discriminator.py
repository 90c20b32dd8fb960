"""Convolutional critic producing a 2x2 map of real/synthetic probabilities.

Six stride-2 3x3 convolutions take 128x128 down to 2x2, so each output
cell's receptive field covers roughly one image quadrant.  Leaky ReLU
activations; batch normalization on every layer except the first and last.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .generator import ENCODER_SLOPE, scaled
from .validation import check_image_tensor


class PatchDiscriminator(nn.Module):
    def __init__(self, width_multiplier: float = 1.0):
        super().__init__()
        m = width_multiplier
        c64, c128, c256, c512 = (scaled(c, m) for c in (64, 128, 256, 512))
        self.conv0 = nn.Conv2d(3, c64, 3, 2, 1)
        self.conv1 = nn.Conv2d(c64, c128, 3, 2, 1)
        self.bn1 = nn.BatchNorm2d(c128)
        self.conv2 = nn.Conv2d(c128, c256, 3, 2, 1)
        self.bn2 = nn.BatchNorm2d(c256)
        self.conv3 = nn.Conv2d(c256, c512, 3, 2, 1)
        self.bn3 = nn.BatchNorm2d(c512)
        self.conv4 = nn.Conv2d(c512, c512, 3, 2, 1)
        self.bn4 = nn.BatchNorm2d(c512)
        self.conv5 = nn.Conv2d(c512, 1, 3, 2, 1)

    def forward(self, image):
        x = check_image_tensor(image, name="discriminator input")
        h = F.leaky_relu(self.conv0(x), ENCODER_SLOPE)
        h = F.leaky_relu(self.bn1(self.conv1(h)), ENCODER_SLOPE)
        h = F.leaky_relu(self.bn2(self.conv2(h)), ENCODER_SLOPE)
        h = F.leaky_relu(self.bn3(self.conv3(h)), ENCODER_SLOPE)
        h = F.leaky_relu(self.bn4(self.conv4(h)), ENCODER_SLOPE)
        return torch.sigmoid(self.conv5(h))

    def score(self, image):
        """Probability map that each region of `image` is a real frontal."""
        return self.forward(image)
