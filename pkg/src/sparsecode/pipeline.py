"""Patch-based image feature pipeline.

Training: sample a patch library from images, normalize each patch,
ZCA-whiten the library, and run K-means to get a unit-norm dictionary.
Testing: extract patches densely from each image, push them through the
same normalize/whiten transform, encode with any encoder (closed-form or
budgeted solver), sum-pool the code grid over 2x2 quadrants, and train a
one-vs-rest ridge classifier on the pooled features.

The fitted whitening transform and codebook persist together in a single
binary artifact (see ``save_artifact``); round-trips are bit exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import CodeBatch, Dictionary, SignalBatch

__all__ = [
    "DEFAULT_EPS_NORM",
    "DEFAULT_EPS_ZCA",
    "ImageSet",
    "WhiteningTransform",
    "Codebook",
    "ImageRepresentation",
    "LinearClassifier",
    "ArtifactFormatError",
    "extract_patches",
    "normalize_patches",
    "fit_whitening",
    "apply_whitening",
    "train_codebook",
    "encode_image",
    "encode_images",
    "train_classifier",
    "predict",
    "evaluate",
    "select_l2_penalty",
    "save_artifact",
    "load_artifact",
]

# Patch normalization and ZCA regularizers, on the raw 0-255 pixel scale.
DEFAULT_EPS_NORM = 10.0
DEFAULT_EPS_ZCA = 0.1

ARTIFACT_MAGIC = b"PXC1"


class ArtifactFormatError(ValueError):
    """Persisted codebook/whitening artifact is malformed."""


@dataclass
class ImageSet:
    """32x32x3 8-bit images with class labels in [0, 10)."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1:] != (32, 32, 3):
            raise ValueError(
                f"expected images of shape (N, 32, 32, 3), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("labels length must equal image count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise ValueError("labels must lie in [0, 10)")

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class WhiteningTransform:
    """Patch mean and symmetric ZCA matrix fitted on a library."""

    mean: np.ndarray
    zca: np.ndarray
    eps_zca: float | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.zca = np.asarray(self.zca, dtype=np.float64)
        n = self.mean.shape[0]
        if self.zca.shape != (n, n):
            raise ValueError("zca matrix shape does not match mean length")


@dataclass
class Codebook:
    dictionary: Dictionary
    kmeans_iters_run: int = 0


@dataclass
class ImageRepresentation:
    """Pooled 4K feature vector for one image (2x2 quadrants x K)."""

    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).ravel()


@dataclass
class LinearClassifier:
    """One-vs-rest ridge regression weights, one row per class, bias last."""

    weights: np.ndarray  # (C, D+1)
    classes: np.ndarray  # (C,)
    l2_penalty: float


def _image_array(images) -> np.ndarray:
    if isinstance(images, ImageSet):
        return images.images
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return arr


def extract_patches(images, patch_size: int = 6, stride: int = 1,
                    limit: int | None = None,
                    seed: int | None = None) -> SignalBatch:
    """Extract square patches, flattened channel-interleaved to columns.

    Without ``limit``: every grid position of every image, image-major
    then row-major over positions (dense mode; stride 1 on 32x32 images
    gives 27*27 = 729 patches each).  With ``limit``: that many positions
    sampled uniformly without replacement using ``seed``.
    """
    arr = _image_array(images)
    if arr.shape[0] == 0:
        raise ValueError("empty image set")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    if patch_size > arr.shape[1] or patch_size > arr.shape[2]:
        raise ValueError("patch_size exceeds image side")
    windows = sliding_window_view(arr, (patch_size, patch_size), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    # (N, gh, gw, C, p, p) -> (N, gh, gw, p, p, C): channels interleave
    # fastest, matching image[r:r+p, c:c+p, :].reshape(-1).
    windows = windows.transpose(0, 1, 2, 4, 5, 3)
    n_img, gh, gw = windows.shape[:3]
    dim = patch_size * patch_size * arr.shape[3]
    if limit is None:
        flat = windows.reshape(n_img * gh * gw, dim)
    else:
        total = n_img * gh * gw
        if limit > total:
            raise ValueError(f"limit {limit} exceeds {total} available patches")
        rng = np.random.default_rng(seed)
        idx = rng.choice(total, size=limit, replace=False)
        ni, rest = np.divmod(idx, gh * gw)
        ri, ci = np.divmod(rest, gw)
        flat = windows[ni, ri, ci].reshape(limit, dim)
    return SignalBatch(flat.astype(np.float64).T)


def normalize_patches(batch: SignalBatch,
                      eps_norm: float = DEFAULT_EPS_NORM) -> SignalBatch:
    """Standardize each patch: subtract its mean, divide by
    sqrt(var + eps_norm).  The regularizer keeps constant patches finite."""
    x = batch.data
    centered = x - x.mean(axis=0, keepdims=True)
    var = np.mean(centered * centered, axis=0, keepdims=True)
    return SignalBatch(centered / np.sqrt(var + eps_norm))


def fit_whitening(library: SignalBatch,
                  eps_zca: float = DEFAULT_EPS_ZCA) -> WhiteningTransform:
    """Fit ZCA whitening V (D + eps I)^-1/2 V^T on the library covariance."""
    x = library.data
    n, m = x.shape
    if m < n:
        raise ValueError(f"library needs at least {n} columns, got {m}")
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    cov = (centered @ centered.T) / m
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals, 0.0)
    scale = 1.0 / np.sqrt(eigvals + eps_zca)
    zca = (eigvecs * scale[None, :]) @ eigvecs.T
    return WhiteningTransform(mean=mean, zca=zca, eps_zca=eps_zca)


def apply_whitening(transform: WhiteningTransform,
                    batch: SignalBatch) -> SignalBatch:
    return SignalBatch(transform.zca @ (batch.data - transform.mean[:, None]))


def train_codebook(whitened_library: SignalBatch, k: int,
                   iterations: int = 25, seed: int = 0) -> Codebook:
    """Lloyd's K-means on the library, atoms normalized to unit norm.

    Initialization samples k distinct library columns.  Empty clusters
    are re-seeded from the point currently farthest from its centroid.
    Stops early once assignments are stable.
    """
    x = whitened_library.data
    n, m = x.shape
    if k > m:
        raise ValueError(f"k={k} exceeds library size {m}")
    rng = np.random.default_rng(seed)
    centroids = x[:, rng.choice(m, size=k, replace=False)].T.copy()
    x_sq = np.einsum("ij,ij->j", x, x)
    prev_assign = None
    iters_run = 0
    for it in range(1, iterations + 1):
        scores = centroids @ x - 0.5 * np.einsum("ij,ij->i", centroids,
                                                 centroids)[:, None]
        assign = np.argmax(scores, axis=0)
        iters_run = it
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros((k, n))
        np.add.at(sums, assign, x.T)
        # squared distance of each point to its assigned centroid
        point_d2 = x_sq - 2.0 * scores[assign, np.arange(m)]
        for empty in np.nonzero(counts == 0)[0]:
            far = int(np.argmax(point_d2))
            centroids[empty] = x[:, far]
            point_d2[far] = -np.inf
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
    norms = np.linalg.norm(centroids, axis=1)
    for bad in np.nonzero(norms < 1e-12)[0]:
        col = x[:, rng.integers(m)]
        centroids[bad] = col
        norms[bad] = np.linalg.norm(col)
    atoms = (centroids / norms[:, None]).T
    return Codebook(Dictionary(atoms, unit_norm=True),
                    kmeans_iters_run=iters_run)


def _pool_quadrants(codes: np.ndarray, gh: int, gw: int) -> np.ndarray:
    # Odd grids split 14/13: the first quadrant keeps the extra row/column.
    grid = codes.reshape(codes.shape[0], gh, gw)
    rs, cs = (gh + 1) // 2, (gw + 1) // 2
    quads = (grid[:, :rs, :cs], grid[:, :rs, cs:],
             grid[:, rs:, :cs], grid[:, rs:, cs:])
    return np.concatenate([q.sum(axis=(1, 2)) for q in quads])


def encode_image(image, codebook: Codebook, whitening: WhiteningTransform,
                 encoder, eps_norm: float = DEFAULT_EPS_NORM,
                 patch_size: int = 6) -> ImageRepresentation:
    """Dense patches -> normalize -> whiten -> encode -> 2x2 sum pooling.

    ``encoder`` is anything with an ``encode(SignalBatch) -> CodeBatch``
    method (a OneStepEncoder or a SolverEncoder).
    """
    arr = _image_array(image)
    patches = extract_patches(arr, patch_size=patch_size)
    side = arr.shape[1] - patch_size + 1
    whitened = apply_whitening(whitening, normalize_patches(patches, eps_norm))
    codes = encoder.encode(whitened)
    return ImageRepresentation(_pool_quadrants(codes.data, side, side))


def encode_images(images, codebook: Codebook, whitening: WhiteningTransform,
                  encoder, eps_norm: float = DEFAULT_EPS_NORM) -> np.ndarray:
    """Stack per-image representations into an (N, 4K) matrix."""
    arr = _image_array(images)
    out = None
    for i in range(arr.shape[0]):
        rep = encode_image(arr[i], codebook, whitening, encoder, eps_norm)
        if out is None:
            out = np.empty((arr.shape[0], rep.features.shape[0]))
        out[i] = rep.features
    return out


def train_classifier(representations: np.ndarray, labels: np.ndarray,
                     l2_penalty: float) -> LinearClassifier:
    """One-vs-rest ridge regression on +-1 targets, closed form.

    The bias column is not penalized.  A singular normal matrix is
    retried with a 10x larger penalty up to 3 times before raising.
    """
    x = np.asarray(representations, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    targets = np.where(labels[:, None] == classes[None, :], 1.0, -1.0)
    xb = np.hstack([x, np.ones((x.shape[0], 1))])
    gram = xb.T @ xb
    rhs = xb.T @ targets
    reg = np.eye(xb.shape[1])
    reg[-1, -1] = 0.0
    penalty = float(l2_penalty)
    for attempt in range(4):
        try:
            weights = np.linalg.solve(gram + penalty * reg, rhs).T
            break
        except np.linalg.LinAlgError:
            if attempt == 3:
                raise
            penalty *= 10.0
    return LinearClassifier(weights=weights, classes=classes,
                            l2_penalty=penalty)


def predict(classifier: LinearClassifier,
            representations: np.ndarray) -> np.ndarray:
    x = np.asarray(representations, dtype=np.float64)
    xb = np.hstack([x, np.ones((x.shape[0], 1))])
    scores = xb @ classifier.weights.T
    return classifier.classes[np.argmax(scores, axis=1)]


def evaluate(classifier: LinearClassifier, representations: np.ndarray,
             labels: np.ndarray) -> float:
    """Fraction of argmax predictions matching the labels."""
    return float(np.mean(predict(classifier, representations)
                         == np.asarray(labels)))


def select_l2_penalty(representations: np.ndarray, labels: np.ndarray,
                      grid=(1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2),
                      holdout_fraction: float = 0.2,
                      seed: int = 0) -> float:
    """Pick the ridge penalty with the best held-out accuracy.

    Deterministic seeded split; ties go to the smaller penalty.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_hold = max(1, int(round(holdout_fraction * n)))
    hold, fit = perm[:n_hold], perm[n_hold:]
    best_penalty, best_acc = None, -1.0
    for penalty in grid:
        clf = train_classifier(representations[fit], labels[fit], penalty)
        acc = evaluate(clf, representations[hold], labels[hold])
        if acc > best_acc:
            best_penalty, best_acc = penalty, acc
    return best_penalty


# ---------------------------------------------------------------------------
# Artifact persistence: magic "PXC1", little-endian u32 n and K, then
# row-major float64 arrays mean (n), zca (n x n), atoms (n x K).


def save_artifact(path, whitening: WhiteningTransform, codebook: Codebook):
    n = whitening.mean.shape[0]
    atoms = codebook.dictionary.atoms
    if atoms.shape[0] != n:
        raise ValueError("whitening and codebook dimensions disagree")
    k = atoms.shape[1]
    with open(path, "wb") as fh:
        fh.write(ARTIFACT_MAGIC)
        fh.write(struct.pack("<II", n, k))
        fh.write(np.ascontiguousarray(whitening.mean, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(whitening.zca, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(atoms, dtype="<f8").tobytes())


def load_artifact(path) -> tuple[WhiteningTransform, Codebook]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != ARTIFACT_MAGIC:
        raise ArtifactFormatError(f"bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise ArtifactFormatError("truncated header")
    n, k = struct.unpack("<II", raw[4:12])
    expected = 12 + 8 * (n + n * n + n * k)
    if len(raw) != expected:
        raise ArtifactFormatError(
            f"expected {expected} bytes for n={n}, K={k}, got {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=12)
    mean = body[:n].copy()
    zca = body[n:n + n * n].reshape(n, n).copy()
    atoms = body[n + n * n:].reshape(n, k).copy()
    whitening = WhiteningTransform(mean=mean, zca=zca, eps_zca=None)
    return whitening, Codebook(Dictionary(atoms, unit_norm=True))
