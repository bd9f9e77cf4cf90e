"""Classical comparison methods: Otsu-initialized thresholding and
statistically grown regions from seeds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DegenerateInputError
from .volume import BinaryMask

NEIGHBORHOODS = {"faces-6": 1, "faces-edges-18": 2, "full-26": 3}


@dataclass
class RegionGrowConfig:
    seeds: list = field(default_factory=list)  # (d, h, w) voxel coordinates
    multiplier: float = 2.0
    iterations: int = 2
    neighborhood: str = "faces-6"
    init_radius: int = 1

    def validate(self, dims=None):
        if not self.seeds:
            raise ConfigError("region growing needs >= 1 seed")
        if self.multiplier <= 0:
            raise ConfigError("multiplier must be > 0")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.neighborhood not in NEIGHBORHOODS:
            raise ConfigError(
                f"neighborhood must be one of {sorted(NEIGHBORHOODS)}, "
                f"got {self.neighborhood!r}")
        if self.init_radius < 0:
            raise ConfigError("init_radius must be >= 0")
        if dims is not None:
            for s in self.seeds:
                if len(s) != 3 or any(not 0 <= c < n for c, n in zip(s, dims)):
                    raise ConfigError(f"seed {tuple(s)} outside grid {tuple(dims)}")
        return self


def otsu_threshold(volume, bins=256):
    """Histogram threshold maximizing the between-class variance
    w0*w1*(mu0-mu1)^2; returns the bin edge, ties toward the lower one."""
    if bins < 2:
        raise ConfigError("bins must be >= 2")
    data = volume.data.reshape(-1)
    lo, hi = float(data.min()), float(data.max())
    if lo == hi:
        raise DegenerateInputError("otsu_threshold: constant volume")
    hist, edges = np.histogram(data, bins=bins, range=(lo, hi))
    hist = hist.astype(np.float64)
    centers = 0.5 * (edges[:-1] + edges[1:])
    total = hist.sum()
    w0 = np.cumsum(hist)[:-1]              # mass of bins [0..i] -> threshold edges[i+1]
    w1 = total - w0
    m0 = np.cumsum(hist * centers)[:-1]
    m1 = m0[-1] + hist[-1] * centers[-1] - m0
    valid = (w0 > 0) & (w1 > 0)
    sigma_b = np.zeros(bins - 1)
    sigma_b[valid] = (w0 * w1)[valid] * (m0[valid] / w0[valid] - m1[valid] / w1[valid]) ** 2
    best = int(np.argmax(sigma_b))          # first occurrence = lower threshold
    return float(edges[best + 1])


def apply_threshold(volume, t):
    """Foreground iff voxel > t (strict)."""
    return BinaryMask(volume.data > t, volume.spacing)


def confidence_region_grow(volume, cfg):
    """Flood fill from seeds accepting |x - mu| <= k*sigma, with (mu, sigma)
    re-estimated over the accepted region between iterations.

    Round 0 statistics come from the voxels within init_radius (Chebyshev)
    of the seeds.  sigma = 0 degenerates to an exact-intensity flood fill.
    The output always contains the seeds; with seeds inside one accepted
    component it is a single connected region.
    """
    cfg.validate(volume.dims)
    data = volume.data
    seed_mask = np.zeros(volume.dims, dtype=bool)
    init_mask = np.zeros(volume.dims, dtype=bool)
    r = cfg.init_radius
    for d, h, w in cfg.seeds:
        seed_mask[d, h, w] = True
        init_mask[max(0, d - r):d + r + 1,
                  max(0, h - r):h + r + 1,
                  max(0, w - r):w + r + 1] = True
    mu = float(data[init_mask].mean(dtype=np.float64))
    sigma = float(data[init_mask].std(dtype=np.float64))
    structure = ndimage.generate_binary_structure(3, NEIGHBORHOODS[cfg.neighborhood])
    region = seed_mask
    for _ in range(cfg.iterations):
        k = cfg.multiplier
        accept = np.abs(data - mu) <= k * sigma
        accept |= seed_mask  # seeds are always part of the region
        region = ndimage.binary_propagation(seed_mask, structure=structure,
                                            mask=accept)
        mu = float(data[region].mean(dtype=np.float64))
        sigma = float(data[region].std(dtype=np.float64))
    return BinaryMask(region, volume.spacing)
