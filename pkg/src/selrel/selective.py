"""Motion-specific filtering of relevance volumes.

Take the temporal Sobel response of a relevance volume ("edges in time"),
threshold its magnitude at n standard deviations of the response
distribution, and mask the original relevance down to the voxels whose
relevance changes sharply across frames.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import InputError
from .explain import RelevanceVolume
from .validation import volume_data
from .volume import Volume3, sobel3, volume_stats


@dataclass(frozen=True)
class SelectiveConfig:
    """n_sigma: threshold in standard deviations of the edge-map distribution.
    use_magnitude: compare |G| against the threshold (keeps motion offsets as
    well as onsets); False compares the raw signed response."""

    n_sigma: float = 4.0
    use_magnitude: bool = True

    def __post_init__(self):
        if not np.isfinite(self.n_sigma) or self.n_sigma < 0:
            raise InputError(f"n_sigma must be finite and >= 0, got {self.n_sigma}")


@dataclass(frozen=True)
class SupportMask:
    """Binary volume; 1 marks voxels that survive the threshold."""

    volume: Volume3

    def __post_init__(self):
        data = self.volume.data
        if not np.all((data == 0.0) | (data == 1.0)):
            raise InputError("mask values must be exactly 0 or 1")

    @property
    def shape(self):
        return self.volume.shape

    def count(self) -> int:
        return int(self.volume.data.sum())

    def __and__(self, other):
        return SupportMask(Volume3(self.volume.data * other.volume.data))

    def is_subset_of(self, other) -> bool:
        return bool(np.all(self.volume.data <= other.volume.data))


@dataclass(frozen=True)
class SelectiveResult:
    edge_map: Volume3
    mask: SupportMask
    selected: RelevanceVolume
    threshold_value: float


def temporal_edge_map(r) -> Volume3:
    """Sobel response along the frame axis of a relevance volume."""
    return sobel3(Volume3(volume_data(r)), "t")


def selective_mask(g: Volume3, cfg: SelectiveConfig = SelectiveConfig()):
    """Threshold the edge map at n_sigma standard deviations.

    Returns (mask, threshold_value). A constant edge map (std 0) selects
    nothing: no voxel deviates from the rest.
    """
    data = volume_data(g)
    std = volume_stats(Volume3(data)).std
    threshold = cfg.n_sigma * std
    if std == 0.0:
        keep = np.zeros(data.shape, dtype=bool)
    elif cfg.use_magnitude:
        keep = np.abs(data) > threshold
    else:
        keep = data > threshold
    mask = keep.astype(np.float32)
    mask.flags.writeable = False
    return SupportMask(Volume3(mask)), float(threshold)


def apply_selective(r, mask: SupportMask) -> RelevanceVolume:
    """Zero out relevance outside the mask; tags the result selective-<parent>."""
    data = volume_data(r)
    if data.shape != mask.shape:
        raise InputError(f"relevance {data.shape} and mask {mask.shape} dims differ")
    product = data * mask.volume.data
    product.flags.writeable = False
    out = Volume3(product)
    if isinstance(r, RelevanceVolume):
        return RelevanceVolume(out, f"selective-{r.method}", r.class_idx, r.flag)
    return RelevanceVolume(out, "selective-volume", -1)


def selective_relevance(r, cfg: SelectiveConfig = SelectiveConfig()) -> SelectiveResult:
    """Full pipeline: edge map, threshold mask, masked relevance."""
    edges = temporal_edge_map(r)
    mask, threshold = selective_mask(edges, cfg)
    return SelectiveResult(edges, mask, apply_selective(r, mask), threshold)


class SelectiveRelevance(BaseEstimator, TransformerMixin):
    """Stateless transformer wrapping the selective pipeline.

    transform() maps a relevance volume (ndarray, Volume3, or
    RelevanceVolume) to the masked ndarray, so it composes in standard
    pipelines; analyze() returns the full SelectiveResult.
    """

    def __init__(self, n_sigma: float = 4.0, use_magnitude: bool = True):
        self.n_sigma = n_sigma
        self.use_magnitude = use_magnitude

    def _config(self) -> SelectiveConfig:
        return SelectiveConfig(self.n_sigma, self.use_magnitude)

    def fit(self, X=None, y=None):
        self._config()  # validate parameters
        return self

    def transform(self, X) -> np.ndarray:
        return self.analyze(X).selected.volume.data

    def analyze(self, X) -> SelectiveResult:
        return selective_relevance(X, self._config())
