"""Scikit-learn style estimator facade.

`FrontalizationGAN` is fit on a paired-pose manifest and transforms
profile images into frontal views; `IdentityEmbedder` is fit on the same
manifest and transforms images into 256-d identity embeddings.  Both
follow the sklearn conventions (constructor args mirror `get_params`,
`fit` returns self, fitted attributes carry a trailing underscore).
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import embedder as embedder_mod
from .data import DatasetManifest
from .errors import ValidationError
from .evaluation import frontalize_image, rank1_eval
from .losses import LossWeights
from .training import TrainingConfig, load_checkpoint, train


def _as_manifest(x) -> DatasetManifest:
    if isinstance(x, DatasetManifest):
        return x
    return DatasetManifest.load(x)


class FrontalizationGAN(BaseEstimator):
    """Profile-to-frontal image transformer backed by the two-pathway GAN."""

    def __init__(self, batch_size=10, learning_rate=1e-4, total_steps=2000,
                 seed=0, width_multiplier=1.0, use_local_pathway=True,
                 use_ip=True, use_adv=True, use_sym=True,
                 d_steps_per_g_step=1, checkpoint_interval=500,
                 output_dir="runs/default", embedder_path="", loss_weights=None):
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.total_steps = total_steps
        self.seed = seed
        self.width_multiplier = width_multiplier
        self.use_local_pathway = use_local_pathway
        self.use_ip = use_ip
        self.use_adv = use_adv
        self.use_sym = use_sym
        self.d_steps_per_g_step = d_steps_per_g_step
        self.checkpoint_interval = checkpoint_interval
        self.output_dir = output_dir
        self.embedder_path = embedder_path
        self.loss_weights = loss_weights

    def _config(self) -> TrainingConfig:
        weights = self.loss_weights
        if weights is None:
            weights = LossWeights()
        elif isinstance(weights, dict):
            weights = LossWeights(**weights)
        return TrainingConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            total_steps=self.total_steps,
            seed=self.seed,
            width_multiplier=self.width_multiplier,
            weights=weights,
            use_local_pathway=self.use_local_pathway,
            use_ip=self.use_ip,
            use_adv=self.use_adv,
            use_sym=self.use_sym,
            d_steps_per_g_step=self.d_steps_per_g_step,
            checkpoint_interval=self.checkpoint_interval,
            output_dir=self.output_dir,
            embedder_path=self.embedder_path,
        )

    def fit(self, manifest, y=None, embedder=None, progress=False):
        result = train(self._config(), _as_manifest(manifest),
                       embedder=embedder, progress=progress)
        self.state_ = result.state
        self.reports_ = result.reports
        self.checkpoint_path_ = result.checkpoint_path
        self.embedder_ = embedder
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError(
                "this FrontalizationGAN is not fitted; call fit or load first")

    def transform(self, images, landmarks, yaws=None) -> np.ndarray:
        """Frontalize (N, H, W, 3) profile images with (N, 4, 2) landmarks."""
        self._check_fitted()
        images = np.asarray(images, dtype=np.float32)
        if images.ndim == 3:
            images = images[None]
        landmarks = np.asarray(landmarks)
        if landmarks.ndim == 2:
            landmarks = landmarks[None]
        if yaws is None:
            yaws = [0] * len(images)
        if not (len(images) == len(landmarks) == len(yaws)):
            raise ValidationError("images, landmarks, and yaws must align")
        return np.stack([
            frontalize_image(self.state_, img, lm, yaw)
            for img, lm, yaw in zip(images, landmarks, yaws)
        ])

    predict = transform

    def score(self, probe_manifest, gallery_manifest, embedder=None) -> float:
        """Overall rank-1 accuracy of synthesized frontals on a probe set."""
        self._check_fitted()
        embedder = embedder or self.embedder_
        if embedder is None:
            embedder = embedder_mod.EmbedderModel.load(self.embedder_path)
        result = rank1_eval(self.state_, embedder,
                            _as_manifest(probe_manifest), _as_manifest(gallery_manifest))
        return result.overall

    def save(self, path):
        from .training import save_checkpoint

        self._check_fitted()
        return save_checkpoint(self.state_, path)

    @classmethod
    def load(cls, path) -> "FrontalizationGAN":
        state = load_checkpoint(path)
        cfg = state.config
        est = cls(**{f.name: getattr(cfg, f.name)
                     for f in dataclasses.fields(TrainingConfig)
                     if f.name not in ("weights",)},
                  loss_weights=dataclasses.asdict(cfg.weights))
        est.state_ = state
        est.reports_ = []
        est.embedder_ = None
        state.generator.eval()
        state.discriminator.eval()
        return est


class IdentityEmbedder(BaseEstimator, TransformerMixin):
    """Image -> 256-d identity embedding transformer (frozen after fit)."""

    def __init__(self, epochs=30, seed=0, learning_rate=1e-3, batch_size=16):
        self.epochs = epochs
        self.seed = seed
        self.learning_rate = learning_rate
        self.batch_size = batch_size

    def fit(self, manifest, y=None):
        self.model_ = embedder_mod.train_embedder(
            _as_manifest(manifest), epochs=self.epochs, seed=self.seed,
            learning_rate=self.learning_rate, batch_size=self.batch_size)
        self.train_accuracy_ = self.model_.train_accuracy
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this IdentityEmbedder is not fitted; call fit or load first")

    def _images_of(self, x) -> np.ndarray:
        if isinstance(x, (DatasetManifest, str)) or hasattr(x, "__fspath__"):
            from .data import load_all

            samples = load_all(_as_manifest(x), canonicalize=True)
            return np.stack([s.profile_image for s in samples])
        arr = np.asarray(x, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[None]
        return arr

    def transform(self, x) -> np.ndarray:
        """(N, H, W, 3) images or a manifest -> (N, 256) embeddings."""
        self._check_fitted()
        return self.model_.embed_array(self._images_of(x))

    def predict(self, x) -> np.ndarray:
        """Classify into the training identities (original labels)."""
        self._check_fitted()
        import torch

        images = self._images_of(x)
        with torch.no_grad():
            logits = self.model_.net(
                torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))))
        idx = logits.argmax(dim=1).numpy()
        return np.asarray(self.model_.identities)[idx]

    def save(self, path):
        self._check_fitted()
        return self.model_.save(path)

    @classmethod
    def load(cls, path) -> "IdentityEmbedder":
        est = cls()
        est.model_ = embedder_mod.EmbedderModel.load(path)
        est.train_accuracy_ = est.model_.train_accuracy
        return est
