"""Voxel elasticity fields on the cube [-1, 1]^3 and their binary file format.

File layout (little-endian):

    offset  size  content
    0       4     magic b"VOXF"
    4       4     uint32 format version (1)
    8       8     uint64 n (voxels per axis)
    16      8     float64 alpha
    24      8     float64 beta
    32      32    reserved, zero
    64      ...   n^3 records of 21 float64: upper triangle of the 6x6 Mandel
                  matrix, row-major; voxel (i, j, k) is record (i * n + j) * n + k
                  with i the x index

A JSON sidecar ``<file>.json`` carries provenance (generator spec, seed).
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..tensor import DomainError, EllipticityBand, in_class_M

MAGIC = b"VOXF"
VERSION = 1
HEADER = struct.Struct("<4sIQdd32x")
_IU = np.triu_indices(6)


class VoxelFormatError(ValueError):
    pass


@dataclass
class VoxelField:
    """Per-voxel Mandel tensors on a uniform n^3 grid over [-1, 1]^3.

    Every voxel carries a tensor so that the pattern can be tiled or solved
    periodically; embedded solves only read voxels whose center lies in the
    unit ball.
    """

    n: int
    tensors: np.ndarray  # (n, n, n, 6, 6)
    band: EllipticityBand

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=float)
        if self.tensors.shape != (self.n,) * 3 + (6, 6):
            raise ValueError(f"tensors must have shape {(self.n,) * 3 + (6, 6)}, got {self.tensors.shape}")

    @property
    def h(self):
        return 2.0 / self.n

    def centers(self):
        c = -1.0 + (np.arange(self.n) + 0.5) * self.h
        return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)

    def in_ball(self):
        return np.linalg.norm(self.centers(), axis=-1) < 1.0

    def validate(self, ball_only=False):
        """Raise DomainError if any (in-ball) voxel tensor is outside the class M."""
        mask = self.in_ball() if ball_only else np.ones((self.n,) * 3, bool)
        uniq = np.unique(self.tensors[mask].reshape(-1, 36), axis=0)
        for t in uniq:
            if not in_class_M(t.reshape(6, 6), self.band):
                raise DomainError("voxel tensor outside the ellipticity band")
        return self

    def unique_tensors(self, mask=None):
        """(table, index) with tensors[mask] == table[index]."""
        sel = self.tensors if mask is None else self.tensors[mask]
        flat = sel.reshape(-1, 36)
        table, inverse = np.unique(flat, axis=0, return_inverse=True)
        return table.reshape(-1, 6, 6), inverse.reshape(flat.shape[0])

    def volume_fraction(self, tensor, ball_only=False):
        mask = self.in_ball() if ball_only else np.ones((self.n,) * 3, bool)
        hit = np.all(np.isclose(self.tensors[mask], tensor), axis=(-1, -2))
        return float(hit.mean())


def write_voxel_field(path, field: VoxelField, provenance=None):
    path = Path(path)
    header = HEADER.pack(MAGIC, VERSION, field.n, field.band.alpha, field.band.beta)
    assert len(header) == 64
    records = field.tensors.reshape(-1, 6, 6)[:, _IU[0], _IU[1]]
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(records, dtype="<f8").tobytes())
    if provenance is not None:
        Path(str(path) + ".json").write_text(json.dumps(provenance, indent=2, sort_keys=True))


def read_voxel_field(path) -> VoxelField:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 64:
        raise VoxelFormatError("file shorter than the 64-byte header")
    magic, version, n, alpha, beta = HEADER.unpack(raw[:64])
    if magic != MAGIC:
        raise VoxelFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VoxelFormatError(f"unsupported version {version}")
    expected = 64 + n**3 * 21 * 8
    if len(raw) != expected:
        raise VoxelFormatError(f"expected {expected} bytes, got {len(raw)}")
    rec = np.frombuffer(raw, dtype="<f8", offset=64).reshape(n**3, 21)
    t = np.zeros((n**3, 6, 6))
    t[:, _IU[0], _IU[1]] = rec
    t[:, _IU[1], _IU[0]] = rec
    return VoxelField(int(n), t.reshape(n, n, n, 6, 6), EllipticityBand(alpha, beta))


def read_provenance(path):
    side = Path(str(path) + ".json")
    return json.loads(side.read_text()) if side.exists() else None
