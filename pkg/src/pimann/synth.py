"""Synthetic clustered datasets for demos and desk-scale evaluation.

Vectors live near a low-rank latent manifold: cluster centers are drawn in a
rank-`latent_dim` space, points scatter around their center, and everything
is projected to `dim` dimensions with a little isotropic noise. That gives
the grouped structure and benign quantization behavior of descriptor-style
datasets at desk scale.
"""

from __future__ import annotations

import numpy as np


def make_dataset(
    n: int,
    nq: int,
    dim: int,
    seed: int = 0,
    ncenters: int = 64,
    latent_dim: int = 16,
    within_scale: float = 0.25,
    noise_scale: float = 0.01,
    scale: float = 100.0,
):
    """Generate (base, queries): (n, dim) and (nq, dim) float32 matrices.

    Base points and queries share the same latent frame, so every query has
    genuinely near neighbors in the base set.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(ncenters, latent_dim))
    proj = rng.normal(0.0, 1.0 / np.sqrt(latent_dim), size=(latent_dim, dim))

    def sample(count):
        labels = rng.integers(0, ncenters, size=count)
        latent = centers[labels] + rng.normal(0.0, within_scale, size=(count, latent_dim))
        pts = latent @ proj + rng.normal(0.0, noise_scale, size=(count, dim))
        return (pts * scale).astype(np.float32)

    return sample(n), sample(nq)
