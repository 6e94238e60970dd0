"""Multinomial logistic regression on outer-product image features.

The regression runs on vec(x x^T) of the (optionally downsampled) image x,
which blows the feature count up to side^4 and makes the problem badly
conditioned - the reason it rewards curvature-aware preconditioning.  A
seeded synthetic blob dataset keeps everything runnable without downloads;
real IDX files are used when available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from .base import Problem, with_defaults


@dataclass(frozen=True)
class ImageDataset:
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    def __post_init__(self):
        if self.train_images.ndim != 3 or self.train_images.shape[1] != self.train_images.shape[2]:
            raise DimensionError("images must be square, shaped (N, s, s)")
        if len(self.train_images) == 0:
            raise DimensionError("dataset is empty")

    @property
    def side(self) -> int:
        return self.train_images.shape[1]

    @property
    def n_classes(self) -> int:
        return int(max(self.train_labels.max(), self.test_labels.max())) + 1


def synthetic_blobs(
    side: int = 10,
    classes: int = 10,
    n_train: int = 1000,
    n_test: int = 500,
    noise: float = 0.25,
    rng: np.random.Generator | None = None,
) -> ImageDataset:
    """Gaussian class blobs in image space, clipped to [0, 1]."""
    if rng is None:
        rng = np.random.default_rng()
    prototypes = rng.uniform(0.0, 1.0, size=(classes, side, side))

    def draw(count):
        labels = np.arange(count) % classes
        rng.shuffle(labels)
        imgs = prototypes[labels] + noise * rng.standard_normal((count, side, side))
        return np.clip(imgs, 0.0, 1.0), labels

    tr_x, tr_y = draw(n_train)
    te_x, te_y = draw(n_test)
    return ImageDataset(tr_x, tr_y, te_x, te_y)


def downsample(images: np.ndarray, side: int) -> np.ndarray:
    """Block-mean pooling to side x side (native size need not divide evenly)."""
    native = images.shape[1]
    if side > native:
        raise DimensionError(f"downsample target {side} exceeds native size {native}")
    if side == native:
        return images
    edges = np.linspace(0, native, side + 1).astype(np.intp)
    counts = np.diff(edges).astype(np.float64)
    pooled = np.add.reduceat(images, edges[:-1], axis=1) / counts[None, :, None]
    pooled = np.add.reduceat(pooled, edges[:-1], axis=2) / counts[None, None, :]
    return pooled


def outer_features(images: np.ndarray) -> np.ndarray:
    """vec(x x^T) per image; all zeros for an all-zero image."""
    flat = images.reshape(images.shape[0], -1)
    return np.einsum("bi,bj->bij", flat, flat).reshape(images.shape[0], -1)


def logreg_outer_make(
    dataset: ImageDataset,
    side: int | None = None,
    batch_size: int = 100,
    rng: np.random.Generator | None = None,
) -> Problem:
    """Softmax regression over outer-product features with a bias column."""
    if rng is None:
        rng = np.random.default_rng()
    side = dataset.side if side is None else side
    classes = dataset.n_classes
    train_x = downsample(dataset.train_images, side)
    test_x = downsample(dataset.test_images, side)
    train_y = np.asarray(dataset.train_labels, dtype=np.intp)
    test_y = np.asarray(dataset.test_labels, dtype=np.intp)
    n_train = train_x.shape[0]
    n_features = side * side * side * side
    dim = classes * (n_features + 1)
    batch_rng = np.random.default_rng(rng.integers(2**63))

    def featurize(images):
        phi = outer_features(images)
        return np.concatenate([phi, np.ones((phi.shape[0], 1))], axis=1)

    def unpack(theta):
        return np.asarray(theta, dtype=np.float64).reshape(classes, n_features + 1)

    def batch_logits(theta, images):
        return featurize(images) @ unpack(theta).T

    def softmax(z):
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def nll(logits, labels):
        z = logits - logits.max(axis=1, keepdims=True)
        log_prob = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return -float(np.mean(log_prob[np.arange(labels.size), labels]))

    def resolve(batch):
        if batch is None:
            batch = sample_batch()
        return train_x[batch], train_y[batch]

    def sample_batch():
        return batch_rng.integers(0, n_train, size=batch_size)

    def loss(theta, batch=None):
        images, labels = resolve(batch)
        return nll(batch_logits(theta, images), labels)

    def loss_and_grad(theta, batch=None):
        images, labels = resolve(batch)
        phi = featurize(images)
        logits = phi @ unpack(theta).T
        p = softmax(logits)
        value = nll(logits, labels)
        p[np.arange(labels.size), labels] -= 1.0
        return value, (p.T @ phi / labels.size).ravel()

    def grad(theta, batch=None):
        return loss_and_grad(theta, batch)[1]

    def hvp(theta, v, batch=None):
        # Exact for a linear softmax model: H = E[phi (diag(p) - p p^T) phi^T].
        images, labels = resolve(batch)
        phi = featurize(images)
        p = softmax(phi @ unpack(theta).T)
        dz = phi @ np.asarray(v, dtype=np.float64).reshape(classes, n_features + 1).T
        m = p * dz
        m -= p * m.sum(axis=1, keepdims=True)
        return (m.T @ phi / labels.size).ravel()

    def full_train_loss(theta, chunk: int = 200):
        total = 0.0
        for start in range(0, n_train, chunk):
            images = train_x[start : start + chunk]
            labels = train_y[start : start + chunk]
            total += nll(batch_logits(theta, images), labels) * labels.size
        return total / n_train

    def test_error(theta, chunk: int = 200):
        wrong = 0
        n_test = test_x.shape[0]
        for start in range(0, n_test, chunk):
            logits = batch_logits(theta, test_x[start : start + chunk])
            wrong += int(np.sum(logits.argmax(axis=1) != test_y[start : start + chunk]))
        return wrong / n_test

    return with_defaults(
        name=f"logreg(side={side},classes={classes})",
        dim=dim,
        loss=loss,
        grad=grad,
        loss_and_grad=loss_and_grad,
        hvp=hvp,
        sample_batch=sample_batch,
        init_theta=lambda r: np.zeros(dim),
        eval_loss=full_train_loss,
        extra_metrics=lambda theta: {
            "train_loss_full": full_train_loss(theta),
            "test_error": test_error(theta),
        },
    )
