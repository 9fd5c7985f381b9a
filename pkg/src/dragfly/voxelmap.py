"""Sparse occupancy voxel map merged from robot and device point-cloud sources.

Voxel index i covers [i*s, (i+1)*s) per axis and has center (i + 0.5)*s.
Occupancy is monotone: voxels never un-occupy (static scenes only). Each
occupied voxel carries the set of sources that observed it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SOURCES = ("robot", "device")
_SOURCE_BIT = {"robot": 1, "device": 2}


@dataclass(frozen=True)
class PointCloudSample:
    """A batch of world-frame points from one source at one time stamp."""

    points: np.ndarray  # (N, 3) m
    source: str
    stamp: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}, expected one of {SOURCES}")


class VoxelMap:
    """Occupancy set over integer voxel indices, tagged by observing source."""

    def __init__(self, voxel_size: float = 0.2):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be > 0")
        self.voxel_size = float(voxel_size)
        self._cells: dict[tuple[int, int, int], int] = {}  # index -> source bitmask
        self._centers_cache: np.ndarray | None = None
        self.version = 0  # bumped on every change, lets consumers cache queries

    def __len__(self) -> int:
        return len(self._cells)

    def index_of(self, p) -> tuple[int, int, int]:
        p = np.asarray(p, dtype=float)
        ix = np.floor(p / self.voxel_size).astype(int)
        return (int(ix[0]), int(ix[1]), int(ix[2]))

    def center_of(self, idx) -> np.ndarray:
        return (np.asarray(idx, dtype=float) + 0.5) * self.voxel_size

    def sources_of(self, idx) -> set[str]:
        mask = self._cells.get(tuple(idx), 0)
        return {name for name, bit in _SOURCE_BIT.items() if mask & bit}

    def source_count(self, source: str) -> int:
        bit = _SOURCE_BIT[source]
        return sum(1 for m in self._cells.values() if m & bit)

    def integrate_point_cloud(self, sample: PointCloudSample) -> int:
        """Mark the voxel containing each point as occupied by sample.source.

        Returns the number of voxels newly occupied (re-marking and adding a
        second source to an already occupied voxel are idempotent on the
        count). Raises on non-finite points, naming the first offender.
        """
        new, _ = self.integrate_with_delta(sample)
        return new

    def integrate_with_delta(self, sample: PointCloudSample) -> tuple[int, list[tuple[int, int, int, int]]]:
        """integrate_point_cloud variant that also reports what changed.

        The delta lists (ix, iy, iz, mask) for every voxel whose source mask
        changed, newly occupied ones included.
        """
        pts = sample.points
        if pts.size:
            finite = np.isfinite(pts).all(axis=1)
            if not finite.all():
                bad = int(np.argmin(finite))
                raise ValueError(f"non-finite point at index {bad}: {pts[bad]}")
        bit = _SOURCE_BIT[sample.source]
        new = 0
        delta: list[tuple[int, int, int, int]] = []
        if pts.size:
            idx = np.floor(pts / self.voxel_size).astype(int)
            for ix, iy, iz in idx:
                key = (int(ix), int(iy), int(iz))
                prev = self._cells.get(key)
                if prev is None:
                    self._cells[key] = bit
                    delta.append((*key, bit))
                    new += 1
                elif not (prev & bit):
                    self._cells[key] = prev | bit
                    delta.append((*key, prev | bit))
        if delta:
            self.version += 1
            self._centers_cache = None
        return new, delta

    def merged_map(self) -> set[tuple[float, float, float]]:
        """Union of occupied voxel centers over both sources."""
        s = self.voxel_size
        return {((i + 0.5) * s, (j + 0.5) * s, (k + 0.5) * s) for (i, j, k) in self._cells}

    def occupied_indices(self) -> list[tuple[int, int, int]]:
        return sorted(self._cells)

    def occupied_centers(self) -> np.ndarray:
        """All occupied voxel centers as an (N, 3) array (cached per version)."""
        if self._centers_cache is None:
            if not self._cells:
                self._centers_cache = np.empty((0, 3))
            else:
                idx = np.array(sorted(self._cells), dtype=float)
                self._centers_cache = (idx + 0.5) * self.voxel_size
        return self._centers_cache

    def voxels_within_horizon(self, center, h: float) -> list[tuple[np.ndarray, float]]:
        """Occupied voxels whose centers lie within distance h of `center`.

        Returns (voxel center, distance) pairs sorted ascending by distance;
        ties break on voxel index so the order is deterministic.
        """
        if h <= 0:
            raise ValueError("horizon must be > 0")
        centers, dists = self.horizon_arrays(center, h)
        order = np.lexsort((centers[:, 2], centers[:, 1], centers[:, 0], dists))
        return [(centers[i], float(dists[i])) for i in order]

    def horizon_arrays(self, center, h: float) -> tuple[np.ndarray, np.ndarray]:
        """Array variant of voxels_within_horizon (unsorted), for hot loops."""
        centers = self.occupied_centers()
        if centers.shape[0] == 0:
            return np.empty((0, 3)), np.empty(0)
        c = np.asarray(center, dtype=float)
        dists = np.linalg.norm(centers - c, axis=1)
        keep = dists <= h
        return centers[keep], dists[keep]

    def is_segment_free(self, a, b, clearance: float) -> bool:
        """True iff no occupied voxel center lies within `clearance` of segment ab."""
        if clearance < 0:
            raise ValueError("clearance must be >= 0")
        centers = self.occupied_centers()
        if centers.shape[0] == 0:
            return True
        d = segment_point_distances(np.asarray(a, float), np.asarray(b, float), centers)
        return bool(np.min(d) > clearance)

    def distance_to_nearest_occupied(self, p) -> float:
        """Exact minimum distance from p to any occupied voxel center (inf if empty)."""
        centers = self.occupied_centers()
        if centers.shape[0] == 0:
            return math.inf
        return float(np.min(np.linalg.norm(centers - np.asarray(p, float), axis=1)))

    def dump(self) -> str:
        """Line-oriented text dump: one `ix iy iz sources` line per voxel, sorted."""
        lines = []
        for key in sorted(self._cells):
            mask = self._cells[key]
            names = ",".join(n for n in SOURCES if mask & _SOURCE_BIT[n])
            lines.append(f"{key[0]} {key[1]} {key[2]} {names}")
        return "\n".join(lines) + ("\n" if lines else "")


def load_voxels(text: str, voxel_size: float) -> VoxelMap:
    """Inverse of VoxelMap.dump for the given voxel size."""
    vmap = VoxelMap(voxel_size)
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {ln}: expected 'ix iy iz sources', got {line!r}")
        key = (int(parts[0]), int(parts[1]), int(parts[2]))
        mask = 0
        for name in parts[3].split(","):
            if name not in _SOURCE_BIT:
                raise ValueError(f"line {ln}: unknown source {name!r}")
            mask |= _SOURCE_BIT[name]
        vmap._cells[key] = mask
    vmap.version += 1
    vmap._centers_cache = None
    return vmap


def segment_point_distances(a: np.ndarray, b: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Distance from each row of `points` to segment ab (degenerate ab allowed)."""
    ab = b - a
    denom = float(ab @ ab)
    if denom <= 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)
