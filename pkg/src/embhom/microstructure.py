"""Reproducible isotropic two-phase microstructures on [-1, 1]^3.

Randomness comes from ``numpy.random.Generator(numpy.random.Philox(seed))``,
a counter-based generator whose streams are identical across platforms.
Phase 0 is the matrix, phase 1 the second phase.
"""

import json
from dataclasses import asdict, dataclass, field as dc_field
from typing import Optional, Tuple

import numpy as np

from .fem.voxel import VoxelField, write_voxel_field
from .tensor import DomainError, EllipticityBand, IsoModuli, iso_to_full

KINDS = ("constant", "two_phase_voxel", "sphere_inclusions", "laminate")
MAX_VOXELS_PER_AXIS = 512


class PackingError(RuntimeError):
    pass


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    """Recipe for a voxel field.

    Parameters
    ----------
    kind : str
        One of ``constant``, ``two_phase_voxel``, ``sphere_inclusions``, ``laminate``.
    phases : tuple of IsoModuli
        One phase for ``constant``, two otherwise.
    n : int
        Voxels per axis.
    p : float
        Target volume fraction of phase 1 (voxel kind, laminate, and sphere
        count when ``count`` is not given).
    r : float
        Inclusion radius in cube units.
    count : int, optional
        Number of inclusions, or number of bilayers for laminates.
    axis : int
        Laminate normal, 0-based.
    seed : int
        64-bit seed.
    band : EllipticityBand, optional
        Defaults to the tightest band holding every phase.
    """

    kind: str
    phases: Tuple[IsoModuli, ...]
    n: int = 16
    p: float = 0.5
    r: float = 0.2
    count: Optional[int] = None
    axis: int = 0
    seed: int = 0
    band: Optional[EllipticityBand] = None
    max_attempts: int = dc_field(default=10000, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}; expected one of {KINDS}")
        want = 1 if self.kind == "constant" else 2
        if len(self.phases) != want:
            raise ValueError(f"{self.kind} needs {want} phase(s), got {len(self.phases)}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("volume fraction p must lie in [0, 1]")
        if self.n < 1 or self.n > MAX_VOXELS_PER_AXIS:
            raise CapacityError(f"n must lie in [1, {MAX_VOXELS_PER_AXIS}]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")
        if self.band is None:
            ev = [v for ph in self.phases for v in (ph.kappa, 2 * ph.mu)]
            lo, hi = min(ev), max(ev)
            if lo == hi:
                hi = lo * (1 + 1e-9)
            object.__setattr__(self, "band", EllipticityBand(lo, hi))
        for ph in self.phases:
            if not self.band.contains_iso(ph):
                raise DomainError(f"phase {ph} outside the band [{self.band.alpha}, {self.band.beta}]")

    def to_dict(self):
        d = asdict(self)
        d["phases"] = [{"kappa": ph.kappa, "mu": ph.mu} for ph in self.phases]
        d["band"] = {"alpha": self.band.alpha, "beta": self.band.beta}
        d.pop("max_attempts")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["phases"] = tuple(IsoModuli(float(ph["kappa"]), float(ph["mu"])) for ph in d["phases"])
        if d.get("band") is not None:
            d["band"] = EllipticityBand(float(d["band"]["alpha"]), float(d["band"]["beta"]))
        return cls(**d)


def rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def _centers(n):
    c = -1.0 + (np.arange(n) + 0.5) * 2.0 / n
    return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)


def _wrap(d):
    # periodic difference on a cell of width 2
    return d - 2.0 * np.round(d / 2.0)


def place_spheres(count, r, gen, max_attempts=10000):
    """Random non-overlapping sphere centers in the periodic cube."""
    if 2 * r >= 2.0:
        raise PackingError("radius too large for the periodic cell")
    centers = []
    attempts = 0
    while len(centers) < count:
        attempts += 1
        if attempts > max_attempts:
            raise PackingError(f"placed {len(centers)} of {count} inclusions after {max_attempts} attempts")
        c = gen.uniform(-1.0, 1.0, 3)
        if centers:
            d = np.linalg.norm(_wrap(np.asarray(centers) - c), axis=1)
            if d.min() < 2 * r:
                continue
        centers.append(c)
    return np.asarray(centers).reshape(-1, 3)


def phase_map(spec: GeneratorSpec):
    """Integer phase index per voxel, shape (n, n, n)."""
    n = spec.n
    if spec.kind == "constant":
        return np.zeros((n, n, n), dtype=np.int8)
    if spec.kind == "two_phase_voxel":
        return (rng(spec.seed).random((n, n, n)) < spec.p).astype(np.int8)
    if spec.kind == "laminate":
        layers = spec.count or 1
        if n % layers:
            raise ValueError(f"{layers} bilayers do not divide n={n}")
        period = n // layers
        idx = np.arange(n) % period
        profile = (idx >= round((1 - spec.p) * period)).astype(np.int8)
        shape = [1, 1, 1]
        shape[spec.axis] = n
        return np.broadcast_to(profile.reshape(shape), (n, n, n)).copy()
    # sphere_inclusions
    count = spec.count
    if count is None:
        count = int(round(spec.p * 8.0 / (4.0 / 3.0 * np.pi * spec.r**3)))
    centers = place_spheres(count, spec.r, rng(spec.seed), spec.max_attempts)
    x = _centers(n).reshape(-1, 3)
    inside = np.zeros(len(x), bool)
    for c in centers:
        inside |= np.linalg.norm(_wrap(x - c), axis=1) < spec.r
    return inside.reshape(n, n, n).astype(np.int8)


def generate(spec: GeneratorSpec) -> VoxelField:
    """Voxel field for ``spec``; identical seeds give bit-identical fields."""
    table = np.stack([iso_to_full(ph) for ph in spec.phases])
    field = VoxelField(spec.n, table[phase_map(spec)], spec.band)
    return field


def rescale(field: VoxelField, N: int) -> VoxelField:
    """Tile the pattern N times per axis on the same cube.

    Output voxel index i maps to input voxel i mod n, i.e. x -> N x wrapped
    periodically.
    """
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    N = int(N)
    if N * field.n > MAX_VOXELS_PER_AXIS:
        raise CapacityError(f"{N} x {field.n} voxels per axis exceeds {MAX_VOXELS_PER_AXIS}")
    if N == 1:
        return VoxelField(field.n, field.tensors.copy(), field.band)
    return VoxelField(N * field.n, np.tile(field.tensors, (N, N, N, 1, 1)), field.band)


def two_point_correlation(indicator, lag):
    """Directional P(phase1 at x and at x + lag e_d) for d = 0, 1, 2 (periodic)."""
    ind = np.asarray(indicator, dtype=float)
    return np.array([np.mean(ind * np.roll(ind, -lag, axis=d)) for d in range(3)])


def save(path, spec: GeneratorSpec, field: VoxelField = None):
    field = field if field is not None else generate(spec)
    write_voxel_field(path, field, provenance={"generator": spec.kind, "seed": spec.seed, "spec": spec.to_dict()})
    return field


def spec_json(spec: GeneratorSpec):
    return json.dumps(spec.to_dict(), sort_keys=True)
