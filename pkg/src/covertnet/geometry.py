"""Euclidean primitives: distances, coverage disks, union areas, links, power."""

from __future__ import annotations

import enum
import math
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, UnsupportedMethodError

MIN_STOCHASTIC_SAMPLES = 10_000
_MC_CHUNK = 1 << 18


class AreaMethod(str, enum.Enum):
    EXACT = "exact"
    GRID = "grid"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInputError(f"non-finite point ({self.x}, {self.y})")


@dataclass(frozen=True)
class Disk:
    center: Point2
    radius: float

    def __post_init__(self):
        if not math.isfinite(self.radius) or self.radius < 0:
            raise InvalidInputError(f"disk radius must be finite and >= 0, got {self.radius}")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2


@dataclass(frozen=True)
class AreaEstimate:
    value: float
    std_error: float
    method: AreaMethod
    sample_count: int

    def __post_init__(self):
        if self.value < 0 or self.std_error < 0:
            raise InvalidInputError("area estimate and its error must be nonnegative")
        if self.method is AreaMethod.EXACT and self.std_error != 0:
            raise InvalidInputError("exact estimates carry no error")


@dataclass(frozen=True)
class ChannelParams:
    snr_target: float
    noise_density: float
    path_loss_exponent: float

    def __post_init__(self):
        for name in ("snr_target", "noise_density", "path_loss_exponent"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidInputError(f"{name} must be finite and > 0, got {v}")
        if not 2.0 <= self.path_loss_exponent <= 6.0:
            warnings.warn(
                f"path-loss exponent {self.path_loss_exponent} outside the usual [2, 6]",
                stacklevel=2,
            )


class Topology:
    """Node positions in the plane, stored as an (N, 2) float64 array."""

    __slots__ = ("positions",)

    def __init__(self, positions):
        pos = np.array(positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise InvalidInputError(f"positions must be an (N, 2) array with N >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise InvalidInputError("positions contain non-finite coordinates")
        pos.setflags(write=False)
        self.positions = pos

    @classmethod
    def from_points(cls, points: Iterable[Point2]) -> "Topology":
        return cls([[p.x, p.y] for p in points])

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def points(self) -> list[Point2]:
        return [Point2(float(x), float(y)) for x, y in self.positions]

    def has_duplicates(self) -> bool:
        return len({(x, y) for x, y in self.positions.tolist()}) < self.n

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return np.array_equal(self.positions, other.positions)

    def __repr__(self):
        return f"Topology({self.positions.tolist()!r})"


def _positions(topology) -> np.ndarray:
    if isinstance(topology, Topology):
        return topology.positions
    return Topology(topology).positions


def pairwise_distances(topology) -> np.ndarray:
    """Symmetric (N, N) Euclidean distance matrix with an exact zero diagonal."""
    pos = _positions(topology)
    diff = pos[:, None, :] - pos[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    # hypot-style evaluation is symmetric already; force it bitwise anyway
    d = np.minimum(d, d.T)
    np.fill_diagonal(d, 0.0)
    return d


def tx_power(channel: ChannelParams, distance: float) -> float:
    """Transmit power needed to reach ``distance`` at the target SNR."""
    if not distance > 0:
        raise InvalidInputError(f"distance must be > 0, got {distance}")
    return channel.snr_target * channel.noise_density * distance**channel.path_loss_exponent


def link_exists(d_ij: float, r_i: float, r_j: float) -> bool:
    if d_ij < 0 or r_i < 0 or r_j < 0:
        raise InvalidInputError("distance and radii must be nonnegative")
    return d_ij <= min(r_i, r_j)


def induced_adjacency(topology, radii) -> np.ndarray:
    """Boolean link matrix implied by the radii; diagonal is False."""
    d = pairwise_distances(topology)
    r = np.asarray(getattr(radii, "radii", radii), dtype=np.float64)
    if r.shape != (d.shape[0],):
        raise InvalidInputError(f"expected {d.shape[0]} radii, got shape {r.shape}")
    adj = d <= np.minimum(r[:, None], r[None, :])
    np.fill_diagonal(adj, False)
    return adj


def is_connected(adjacency) -> bool:
    adj = np.asarray(adjacency, dtype=bool)
    n = adj.shape[0]
    if n == 0:
        return True
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(adj[i] & ~seen):
            seen[j] = True
            queue.append(j)
    return bool(seen.all())


def components(adjacency) -> np.ndarray:
    """Component label per node (labels ordered by lowest member index)."""
    adj = np.asarray(adjacency, dtype=bool)
    n = adj.shape[0]
    label = np.full(n, -1, dtype=np.int64)
    current = 0
    for start in range(n):
        if label[start] >= 0:
            continue
        label[start] = current
        queue = deque([start])
        while queue:
            i = queue.popleft()
            for j in np.flatnonzero(adj[i] & (label < 0)):
                label[j] = current
                queue.append(j)
        current += 1
    return label


# --------------------------------------------------------------------------
# union of disks
# --------------------------------------------------------------------------


def _lens_union(c1, r1, c2, r2) -> float:
    d = math.hypot(c1[0] - c2[0], c1[1] - c2[1])
    a1, a2 = math.pi * r1 * r1, math.pi * r2 * r2
    if d >= r1 + r2:
        return a1 + a2
    if d <= abs(r1 - r2):
        return max(a1, a2)
    alpha = math.acos(max(-1.0, min(1.0, (d * d + r1 * r1 - r2 * r2) / (2 * d * r1))))
    beta = math.acos(max(-1.0, min(1.0, (d * d + r2 * r2 - r1 * r1) / (2 * d * r2))))
    kite = 0.5 * math.sqrt(max(0.0, (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)))
    return a1 + a2 - (r1 * r1 * alpha + r2 * r2 * beta - kite)


def _bounding_box(centers: np.ndarray, radii: np.ndarray):
    lo = (centers - radii[:, None]).min(axis=0)
    hi = (centers + radii[:, None]).max(axis=0)
    return lo, hi


def union_area_arrays(
    centers,
    radii,
    method: AreaMethod | str = AreaMethod.MONTE_CARLO,
    rng_seed: int = 0,
    samples: int = 100_000,
) -> AreaEstimate:
    """Area of the union of disks given as arrays of centers (N, 2) and radii (N,)."""
    method = AreaMethod(method)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    radii = np.asarray(radii, dtype=np.float64).reshape(-1)
    n = centers.shape[0]
    if n == 0:
        raise InvalidInputError("union_area needs at least one disk")
    if radii.shape[0] != n:
        raise InvalidInputError("centers and radii lengths differ")
    if np.any(radii < 0) or not np.all(np.isfinite(radii)) or not np.all(np.isfinite(centers)):
        raise InvalidInputError("radii must be finite and nonnegative; centers finite")

    if method is AreaMethod.EXACT:
        if n == 1:
            value = math.pi * radii[0] ** 2
        elif n == 2:
            value = _lens_union(centers[0], radii[0], centers[1], radii[1])
        else:
            raise UnsupportedMethodError(f"exact union area supports N <= 2 disks, got {n}")
        return AreaEstimate(float(value), 0.0, AreaMethod.EXACT, 0)

    if samples < MIN_STOCHASTIC_SAMPLES:
        raise InvalidInputError(f"{method.value} needs samples >= {MIN_STOCHASTIC_SAMPLES}")

    keep = radii > 0
    if not keep.any():
        return AreaEstimate(0.0, 0.0, method, int(samples))
    centers, radii = centers[keep], radii[keep]
    lo, hi = _bounding_box(centers, radii)
    width, height = hi - lo
    box_area = float(width * height)
    r2 = radii**2

    if method is AreaMethod.GRID:
        # near-square cells: elongated cells under-resolve disks along their long side
        nx = max(1, round(math.sqrt(samples * width / height)))
        ny = max(1, -(-samples // nx))
        xs = lo[0] + (np.arange(nx) + 0.5) * (width / nx)
        ys = lo[1] + (np.arange(ny) + 0.5) * (height / ny)
        covered = np.zeros((ny, nx), dtype=bool)
        for (cx, cy), rr in zip(centers, r2):
            dx2 = (xs - cx) ** 2
            dy2 = (ys - cy) ** 2
            covered |= (dy2[:, None] + dx2[None, :]) <= rr
        hits = int(np.count_nonzero(covered))
        cell = box_area / (nx * ny)
        # discretisation error: boundary cells treated as independent half-cell errors
        edge = np.zeros_like(covered)
        edge[1:, :] |= covered[1:, :] != covered[:-1, :]
        edge[:-1, :] |= covered[1:, :] != covered[:-1, :]
        edge[:, 1:] |= covered[:, 1:] != covered[:, :-1]
        edge[:, :-1] |= covered[:, 1:] != covered[:, :-1]
        n_edge = int(np.count_nonzero(edge))
        return AreaEstimate(hits * cell, cell * math.sqrt(n_edge / 12.0), method, nx * ny)

    rng = np.random.default_rng(rng_seed)
    hits = 0
    remaining = samples
    while remaining:
        m = min(remaining, _MC_CHUNK)
        pts = lo + rng.random((m, 2)) * (hi - lo)
        inside = np.zeros(m, dtype=bool)
        for (cx, cy), rr in zip(centers, r2):
            inside |= (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2 <= rr
        hits += int(np.count_nonzero(inside))
        remaining -= m
    p = hits / samples
    return AreaEstimate(p * box_area, box_area * math.sqrt(p * (1 - p) / samples), method, int(samples))


def union_area(
    disks: Sequence[Disk],
    method: AreaMethod | str = AreaMethod.MONTE_CARLO,
    rng_seed: int = 0,
    samples: int = 100_000,
) -> AreaEstimate:
    """Area of the union of ``disks``.

    ``exact`` handles one or two disks in closed form. ``grid`` evaluates the
    midpoint rule on a square raster of about ``samples`` cells over the tight
    bounding box; ``monte_carlo`` samples the same box uniformly and reports
    the binomial standard error.
    """
    disks = list(disks)
    if not disks:
        raise InvalidInputError("union_area needs at least one disk")
    centers = np.array([[d.center.x, d.center.y] for d in disks])
    radii = np.array([d.radius for d in disks])
    return union_area_arrays(centers, radii, method, rng_seed, samples)
