"""Identity embedder: a small face classifier used as a frozen feature net.

Four stride-2 convolutions with paired-channel max activations feed a
256-d embedding and a classification head over the training identities.
Once trained it is frozen; the final convolution's feature map and the
embedding are the two activations exposed to the identity-preserving loss
and the recognition harness.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import read_archive, require_version, write_archive
from .data import DatasetManifest, load_all
from .errors import CheckpointError, ValidationError
from .generator import max_out_halves
from .validation import check_image_tensor

EMBEDDER_VERSION = 1
EMBEDDING_DIM = 256


def _rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, path)])))


class EmbedderNet(nn.Module):
    def __init__(self, num_identities: int):
        super().__init__()
        if num_identities < 1:
            raise ValidationError("embedder needs at least one identity")
        self.num_identities = num_identities
        self.conv1 = nn.Conv2d(3, 48, 3, 2, 1)     # -> max of pairs -> 24 @ 64x64
        self.conv2 = nn.Conv2d(24, 96, 3, 2, 1)    # -> 48 @ 32x32
        self.conv3 = nn.Conv2d(48, 192, 3, 2, 1)   # -> 96 @ 16x16
        self.conv4 = nn.Conv2d(96, 256, 3, 2, 1)   # -> 128 @ 8x8
        self.fc1 = nn.Linear(8 * 8 * 128, 2 * EMBEDDING_DIM)
        self.head = nn.Linear(EMBEDDING_DIM, num_identities)

    def activations(self, image):
        """The two exposed activations: final conv feature map and embedding."""
        x = check_image_tensor(image, name="embedder input")
        h = max_out_halves(self.conv1(x), dim=1)
        h = max_out_halves(self.conv2(h), dim=1)
        h = max_out_halves(self.conv3(h), dim=1)
        feat = max_out_halves(self.conv4(h), dim=1)
        embedding = max_out_halves(self.fc1(feat.flatten(1)), dim=-1)
        return feat, embedding

    def embed(self, image):
        return self.activations(image)

    def forward(self, image):
        _, embedding = self.activations(image)
        return self.head(embedding)


def _init_embedder(net: nn.Module, seed: int) -> None:
    g = torch.Generator().manual_seed(int(seed))
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (m.weight.shape[2] * m.weight.shape[3]
                                          if m.weight.dim() == 4 else 1)
            std = (2.0 / fan_in) ** 0.5
            m.weight.data.normal_(0.0, std, generator=g)
            m.bias.data.zero_()


class EmbedderModel:
    """A trained, frozen embedder plus its identity label mapping."""

    def __init__(self, net: EmbedderNet, identities, train_accuracy: float = float("nan")):
        self.net = net
        self.identities = [int(i) for i in identities]
        self.train_accuracy = float(train_accuracy)
        self.freeze()

    def freeze(self) -> None:
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    def activations(self, images):
        return self.net.activations(images)

    def embed_array(self, images: np.ndarray) -> np.ndarray:
        """(N, H, W, 3) float array -> (N, 256) embeddings, batched."""
        out = []
        with torch.no_grad():
            for i in range(0, len(images), 32):
                batch = torch.from_numpy(
                    np.ascontiguousarray(images[i:i + 32].transpose(0, 3, 1, 2))
                ).float()
                out.append(self.activations(batch)[1].numpy())
        return np.concatenate(out, axis=0) if out else np.zeros((0, EMBEDDING_DIM), np.float32)

    def save(self, path):
        arrays = {f"embedder.{k}": v.detach().cpu().numpy()
                  for k, v in self.net.state_dict().items()}
        meta = {
            "format_version": EMBEDDER_VERSION,
            "kind": "embedder",
            "num_identities": self.net.num_identities,
            "identities": self.identities,
            "train_accuracy": self.train_accuracy,
        }
        return write_archive(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "EmbedderModel":
        arrays, meta = read_archive(path)
        require_version(meta, EMBEDDER_VERSION, path)
        if meta.get("kind") != "embedder":
            raise CheckpointError(f"{path} is not an embedder checkpoint")
        net = EmbedderNet(meta["num_identities"])
        state = {}
        for key, value in arrays.items():
            if not key.startswith("embedder."):
                raise CheckpointError(f"{path}: unexpected entry {key!r}")
            state[key[len("embedder."):]] = torch.from_numpy(value.copy())
        try:
            net.load_state_dict(state)
        except RuntimeError as e:
            raise CheckpointError(f"{path}: {e}") from e
        return cls(net, meta["identities"], meta.get("train_accuracy", float("nan")))


def train_embedder(manifest: DatasetManifest, epochs: int = 30, seed: int = 0,
                   learning_rate: float = 1e-3, batch_size: int = 16) -> EmbedderModel:
    """Cross-entropy training on all poses of the manifest's identities.

    Inputs are flip-canonicalized, matching what the embedder sees later
    (synthesized frontals and canonicalized profiles).  Returns a frozen
    model; `train_accuracy` holds the final full-train-set accuracy.
    """
    samples = load_all(manifest, canonicalize=True)
    identities = sorted({s.identity for s in samples})
    if len(identities) < 2:
        raise ValidationError(f"embedder training needs >= 2 identities, got {len(identities)}")
    label_of = {ident: k for k, ident in enumerate(identities)}

    images = torch.from_numpy(np.stack(
        [s.profile_image.transpose(2, 0, 1) for s in samples])).float()
    labels = torch.tensor([label_of[s.identity] for s in samples], dtype=torch.long)

    net = EmbedderNet(len(identities))
    _init_embedder(net, seed)
    opt = torch.optim.Adam(net.parameters(), lr=learning_rate)
    n = len(samples)
    for epoch in range(epochs):
        order = _rng(seed, 0xE3B, epoch).permutation(n)
        for start in range(0, n, batch_size):
            idx = torch.from_numpy(order[start:start + batch_size].copy())
            opt.zero_grad()
            loss = F.cross_entropy(net(images[idx]), labels[idx])
            loss.backward()
            opt.step()

    with torch.no_grad():
        preds = []
        for i in range(0, n, 64):
            preds.append(net(images[i:i + 64]).argmax(dim=1))
        accuracy = (torch.cat(preds) == labels).float().mean().item()
    return EmbedderModel(net, identities, accuracy)
