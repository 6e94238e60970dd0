from .base import Problem, central_diff_gradient, gradient_consistency_error
from .logreg import ImageDataset, logreg_outer_make, outer_features, synthetic_blobs, downsample
from .mnist_io import load_mnist_dataset, mnist_load, load_idx_images, load_idx_labels
from .smooth import quadratic_make, rosenbrock_make
from .xor import sample_xor_batch, xor_make

__all__ = [
    "Problem",
    "ImageDataset",
    "central_diff_gradient",
    "gradient_consistency_error",
    "quadratic_make",
    "rosenbrock_make",
    "logreg_outer_make",
    "outer_features",
    "synthetic_blobs",
    "downsample",
    "xor_make",
    "sample_xor_batch",
    "mnist_load",
    "load_idx_images",
    "load_idx_labels",
    "load_mnist_dataset",
]
