"""Finite lattice graphs: chains, 2D/3D boxes with open or periodic boundaries.

Sites are linearized row-major over their coordinates, so on a ``box2d``
with extents ``(nx, ny)`` the site at ``(x, y)`` has index ``x * ny + y``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

KINDS = {"chain": 1, "box2d": 2, "box3d": 3}
BOUNDARIES = ("open", "periodic")


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    kind: str
    extents: tuple[int, ...]
    boundary: str = "periodic"

    def __post_init__(self):
        object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))
        if self.kind not in KINDS:
            raise LatticeError(f"unknown lattice kind {self.kind!r}")
        if self.boundary not in BOUNDARIES:
            raise LatticeError(f"unknown boundary {self.boundary!r}")
        if len(self.extents) != KINDS[self.kind]:
            raise LatticeError(
                f"{self.kind} needs {KINDS[self.kind]} extents, got {len(self.extents)}"
            )
        if any(e < 2 for e in self.extents):
            raise LatticeError(f"extents must be >= 2, got {self.extents}")
        if self.kind == "chain" and self.boundary == "periodic" and self.extents[0] < 3:
            raise LatticeError("periodic chain needs at least 3 sites")

    @classmethod
    def parse(cls, text: str) -> "LatticeSpec":
        """Parse ``kind:extents[:boundary]``, e.g. ``chain:10:periodic`` or ``box2d:3x3``."""
        parts = text.strip().split(":")
        if len(parts) not in (2, 3):
            raise LatticeError(f"cannot parse lattice {text!r}")
        try:
            extents = tuple(int(e) for e in parts[1].lower().split("x"))
        except ValueError:
            raise LatticeError(f"cannot parse extents in {text!r}") from None
        boundary = parts[2] if len(parts) == 3 else "periodic"
        return cls(parts[0], extents, boundary)

    def __str__(self):
        return f"{self.kind}:{'x'.join(map(str, self.extents))}:{self.boundary}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "extents": list(self.extents), "boundary": self.boundary}

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeSpec":
        return cls(d["kind"], tuple(d["extents"]), d.get("boundary", "periodic"))


@dataclass(frozen=True, eq=False)
class Lattice:
    """Immutable nearest-neighbour graph. Hashes by identity so it can key caches."""

    spec: LatticeSpec
    site_count: int
    edges: np.ndarray  # (n_edges, 2), i < j, sorted
    adjacency: tuple[tuple[int, ...], ...]
    _coords: np.ndarray = field(repr=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency])

    def coords(self, site: int) -> tuple[int, ...]:
        return tuple(int(c) for c in self._coords[site])

    def site_index(self, coords: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(coords), self.spec.extents))

    @cached_property
    def laplacian_matrix(self) -> np.ndarray:
        """Dense graph Laplacian with (Δf)(i) = Σ_{j~i} (f(j) - f(i))."""
        n = self.site_count
        lap = np.zeros((n, n))
        i, j = self.edges[:, 0], self.edges[:, 1]
        lap[i, j] = 1.0
        lap[j, i] = 1.0
        lap[np.arange(n), np.arange(n)] = -self.degrees
        return lap

    @cached_property
    def distances(self) -> np.ndarray:
        n = self.site_count
        dist = np.full((n, n), -1, dtype=np.int64)
        for src in range(n):
            dist[src, src] = 0
            queue = deque([src])
            while queue:
                u = queue.popleft()
                for v in self.adjacency[u]:
                    if dist[src, v] < 0:
                        dist[src, v] = dist[src, u] + 1
                        queue.append(v)
        dist.setflags(write=False)
        return dist

    def eccentricity(self, site: int) -> int:
        return int(self.distances[site].max())

    def translations(self) -> list[np.ndarray]:
        """Site permutations for every lattice translation (periodic lattices only)."""
        if self.spec.boundary != "periodic":
            raise LatticeError("translations are only defined on periodic lattices")
        ext = np.array(self.spec.extents)
        perms = []
        for shift in np.ndindex(*self.spec.extents):
            moved = (self._coords + np.array(shift)) % ext
            perms.append(np.ravel_multi_index(tuple(moved.T), self.spec.extents))
        return perms


def build_lattice(spec: LatticeSpec) -> Lattice:
    ext = spec.extents
    n = int(np.prod(ext))
    coords = np.array(list(np.ndindex(*ext)), dtype=np.int64)
    edge_set = set()
    for axis, size in enumerate(ext):
        for site in range(n):
            c = coords[site].copy()
            if c[axis] + 1 < size:
                c[axis] += 1
            elif spec.boundary == "periodic":
                c[axis] = 0
            else:
                continue
            other = int(np.ravel_multi_index(tuple(c), ext))
            # extent-2 periodic axes: the wrap edge coincides with the open one
            if other != site:
                edge_set.add((min(site, other), max(site, other)))
    edges = np.array(sorted(edge_set), dtype=np.int64).reshape(-1, 2)
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(int(j))
        adj[j].append(int(i))
    coords.setflags(write=False)
    edges.setflags(write=False)
    lat = Lattice(spec, n, edges, tuple(tuple(sorted(a)) for a in adj), coords)
    if (lat.distances < 0).any():
        raise LatticeError(f"lattice {spec} is not connected")
    return lat


def parse_lattice(text: str) -> Lattice:
    return build_lattice(LatticeSpec.parse(text))


def _check_field(lat: Lattice, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (lat.site_count,):
        raise LatticeError(
            f"field has shape {f.shape}, lattice has {lat.site_count} sites"
        )
    return f


def laplacian_apply(lat: Lattice, f) -> np.ndarray:
    f = _check_field(lat, f)
    out = np.zeros_like(f)
    i, j = lat.edges[:, 0], lat.edges[:, 1]
    diff = f[j] - f[i]
    np.add.at(out, i, diff)
    np.add.at(out, j, -diff)
    return out


def graph_distance(lat: Lattice, i: int, j: int) -> int:
    n = lat.site_count
    for s in (i, j):
        if not 0 <= s < n:
            raise LatticeError(f"site {s} outside 0..{n - 1}")
    return int(lat.distances[i, j])
