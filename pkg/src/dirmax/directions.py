"""Direction sets on the unit circle."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

KINDS = ("equispaced", "random", "lacunary", "explicit")


@dataclass(frozen=True, eq=False)
class DirectionSet:
    vectors: np.ndarray
    kind: str = "explicit"
    seed: Optional[int] = None

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=float).reshape(-1, 2)
        if len(vecs) < 1:
            raise ValueError("a direction set needs at least one vector")
        if self.kind not in KINDS:
            raise ValueError(f"unknown direction kind {self.kind!r}")
        norms = np.hypot(vecs[:, 0], vecs[:, 1])
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise ValueError("direction vectors must have unit length")
        if len({(float(a), float(b)) for a, b in vecs}) != len(vecs):
            raise ValueError("direction vectors must be pairwise distinct")
        vecs.flags.writeable = False
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return len(self.vectors)

    def __iter__(self):
        return iter(self.vectors)

    @property
    def angles(self) -> np.ndarray:
        """Angles in ``[0, 2*pi)``."""
        return np.mod(np.arctan2(self.vectors[:, 1], self.vectors[:, 0]), 2 * np.pi)

    def turns(self) -> list[Fraction]:
        """Angles as exact fractions of a full turn.

        Equispaced sets are exact (``j/N``); other kinds use the exact binary
        value of the float angle.
        """
        if self.kind == "equispaced":
            n = len(self)
            return [Fraction(j, n) for j in range(n)]
        return [Fraction(float(a / (2 * np.pi))) % 1 for a in self.angles]

    def subset(self, indices) -> "DirectionSet":
        return DirectionSet(self.vectors[list(indices)], "explicit")

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "n": len(self),
            "seed": self.seed,
            "vectors": [[float(a), float(b)] for a, b in self.vectors],
        })

    @classmethod
    def from_json(cls, text: str) -> "DirectionSet":
        data = json.loads(text)
        ds = cls(np.array(data["vectors"], dtype=float), data["kind"], data.get("seed"))
        if len(ds) != data["n"]:
            raise ValueError("vector count disagrees with 'n'")
        return ds


def _from_angles(angles, kind, seed=None) -> DirectionSet:
    angles = np.asarray(angles, dtype=float)
    return DirectionSet(np.column_stack([np.cos(angles), np.sin(angles)]), kind, seed)


def make_directions(kind: str, n: int, seed: int = 0) -> DirectionSet:
    if n < 1:
        raise ValueError("N must be at least 1")
    if kind == "equispaced":
        j = np.arange(n)
        vecs = np.column_stack([np.cos(2 * np.pi * j / n), np.sin(2 * np.pi * j / n)])
        # exact values on the axes keep rotations by quarter turns exact
        for q, exact in enumerate([(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]):
            if (q * n) % 4 == 0:
                vecs[q * n // 4] = exact
        return DirectionSet(vecs, kind)
    if kind == "random":
        rng = np.random.default_rng(seed)
        return _from_angles(rng.uniform(0.0, 2 * np.pi, n), kind, seed)
    if kind == "lacunary":
        return _from_angles(2.0 ** -np.arange(1, n + 1, dtype=float), kind)
    raise ValueError(f"cannot generate directions of kind {kind!r}")


def nearest_direction(v, s: DirectionSet) -> tuple[np.ndarray, float]:
    """Closest member of ``s`` in Euclidean distance; lowest index wins ties."""
    v = np.asarray(v, dtype=float)
    d = np.hypot(s.vectors[:, 0] - v[0], s.vectors[:, 1] - v[1])
    idx = int(np.argmin(d))
    return s.vectors[idx].copy(), float(d[idx])


def equispaced_covering_radius(n: int) -> float:
    """Worst nearest distance for an equispaced set: ``2 sin(pi/(2N))``."""
    return 2.0 * math.sin(math.pi / (2 * n))
