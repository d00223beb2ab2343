"""Synthetic image data in the CIFAR-10 binary layout.

The experiment runners consume CIFAR-10 binary batch files supplied by
the user; this module generates stand-in files with the same byte layout
so the pipeline, benchmarks and test suite run end to end without the
real dataset.  Ten classes of noisy oriented gratings give a genuinely
learnable but non-trivial classification task: class identity sets the
grating orientation, spatial frequency and a mild color cast, while
phase, amplitude, brightness and pixel noise vary per image.
"""

from __future__ import annotations

import numpy as np

from .pipeline import ImageSet

__all__ = ["make_synthetic_images", "write_cifar_batch",
           "make_synthetic_cifar_files"]


def make_synthetic_images(count: int, seed: int = 0,
                          noise_sigma: float = 45.0,
                          signal_amp: tuple = (30.0, 55.0),
                          distractor_amp: tuple = (15.0, 35.0)) -> ImageSet:
    """Generate ``count`` labeled 32x32x3 images, labels cycling 0..9.

    Each image is a class grating plus a random distractor grating plus
    pixel noise; the knobs control how hard the task is.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    labels = np.arange(count) % 10
    images = np.empty((count, 32, 32, 3), dtype=np.uint8)
    # Per-class structure: orientation sweeps half a turn, frequency
    # alternates between two bands, color cast walks around a mild hue wheel.
    base_theta = np.pi * np.arange(10) / 10.0
    base_freq = np.where(np.arange(10) % 2 == 0, 3.0, 5.0)
    hue = 2.0 * np.pi * np.arange(10) / 10.0
    color = 1.0 + 0.3 * np.cos(hue[:, None]
                               + 2.0 * np.pi * np.arange(3)[None, :] / 3.0)

    def grating(theta, freq, phase):
        return np.sin(2.0 * np.pi * freq
                      * (xx * np.cos(theta) + yy * np.sin(theta)) / 32.0
                      + phase)

    for i in range(count):
        c = labels[i]
        theta = base_theta[c] + rng.normal(0.0, 0.08)
        freq = base_freq[c] * rng.uniform(0.9, 1.1)
        amp = rng.uniform(*signal_amp)
        offset = rng.uniform(100.0, 155.0)
        wave = grating(theta, freq, rng.uniform(0.0, 2.0 * np.pi))
        img = offset + amp * wave[:, :, None] * color[c][None, None, :]
        # class-independent clutter
        d_amp = rng.uniform(*distractor_amp)
        d_wave = grating(rng.uniform(0.0, np.pi), rng.uniform(2.0, 7.0),
                         rng.uniform(0.0, 2.0 * np.pi))
        img += d_amp * d_wave[:, :, None]
        img += rng.normal(0.0, noise_sigma, size=(32, 32, 3))
        images[i] = np.clip(img, 0.0, 255.0).astype(np.uint8)
    return ImageSet(images=images, labels=labels)


def write_cifar_batch(image_set: ImageSet, path):
    """Write an ImageSet as one CIFAR-10 binary batch file.

    Record layout: 1 label byte, then 1024 red, 1024 green, 1024 blue
    bytes, each plane row-major 32x32.
    """
    n = len(image_set)
    records = np.empty((n, 3073), dtype=np.uint8)
    records[:, 0] = image_set.labels.astype(np.uint8)
    planes = image_set.images.transpose(0, 3, 1, 2)  # (N, 3, 32, 32)
    records[:, 1:] = planes.reshape(n, 3072)
    with open(path, "wb") as fh:
        fh.write(records.tobytes())


def make_synthetic_cifar_files(directory, train_count: int, test_count: int,
                               seed: int = 0, **kwargs):
    """Write train.bin / test.bin under ``directory``; returns the paths."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train = make_synthetic_images(train_count, seed=seed, **kwargs)
    test = make_synthetic_images(test_count, seed=seed + 1, **kwargs)
    train_path = directory / "train.bin"
    test_path = directory / "test.bin"
    write_cifar_batch(train, train_path)
    write_cifar_batch(test, test_path)
    return train_path, test_path
