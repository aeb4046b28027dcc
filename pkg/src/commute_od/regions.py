"""Complete-linkage agglomeration of one device's stay points into stay regions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .geo import GeoPoint
from .stays import StayPoint

DEFAULT_LINKAGE_M = 250.0


@dataclass(frozen=True)
class StayRegion:
    lat: float
    lon: float
    members: tuple[StayPoint, ...]
    member_index: tuple[int, ...] = ()

    @property
    def centroid(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)

    @property
    def visit_count(self) -> int:
        return len(self.members)

    @property
    def first_arrival(self) -> int:
        return min(s.arrival_utc for s in self.members)


def cluster_labels(lat: np.ndarray, lon: np.ndarray, linkage_threshold_m: float = DEFAULT_LINKAGE_M) -> np.ndarray:
    """Cluster label per point (the smallest input index of its cluster)."""
    if not linkage_threshold_m > 0:
        raise ValueError("linkage threshold must be positive")
    return kernels.complete_linkage(
        np.ascontiguousarray(lat, dtype=np.float64),
        np.ascontiguousarray(lon, dtype=np.float64),
        float(linkage_threshold_m),
    )


def cluster_regions(stay_points: Sequence[StayPoint], linkage_threshold_m: float = DEFAULT_LINKAGE_M) -> list[StayRegion]:
    """Group stay points whose centroids are all pairwise within the threshold.

    Regions come back ordered by their smallest member index; each region's
    centroid is the mean of its member centroids.
    """
    if not stay_points:
        if not linkage_threshold_m > 0:
            raise ValueError("linkage threshold must be positive")
        return []
    labels = cluster_labels(
        np.fromiter((s.lat for s in stay_points), np.float64, len(stay_points)),
        np.fromiter((s.lon for s in stay_points), np.float64, len(stay_points)),
        linkage_threshold_m,
    ).tolist()
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    regions = []
    for lab in sorted(groups):
        idx = groups[lab]
        slat = slon = 0.0
        for i in idx:
            slat += stay_points[i].lat
            slon += stay_points[i].lon
        regions.append(
            StayRegion(slat / len(idx), slon / len(idx), tuple(stay_points[i] for i in idx), tuple(idx))
        )
    return regions
