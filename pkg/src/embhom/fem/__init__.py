"""Voxel finite-element solvers for embedded and periodic corrector problems."""

from .solver import (
    DiscreteDisplacement,
    EmbeddedProblem,
    PeriodicProblem,
    SolverConfig,
    SolverError,
    StrainReport,
    embedded_problem,
    energy_flux,
    energy_primal,
    flux_average,
    mean_strain,
    periodic_tensor,
    residual,
    solve_basis,
    solve_embedded,
    solve_periodic,
    strain_report,
    truncation_table,
)
from .mesh import TruncatedBoxMesh
from .voxel import VoxelField, VoxelFormatError, read_voxel_field, write_voxel_field

__all__ = [
    "DiscreteDisplacement",
    "EmbeddedProblem",
    "PeriodicProblem",
    "SolverConfig",
    "SolverError",
    "StrainReport",
    "TruncatedBoxMesh",
    "VoxelField",
    "VoxelFormatError",
    "embedded_problem",
    "energy_flux",
    "energy_primal",
    "flux_average",
    "mean_strain",
    "periodic_tensor",
    "read_voxel_field",
    "residual",
    "solve_basis",
    "solve_embedded",
    "solve_periodic",
    "strain_report",
    "truncation_table",
    "write_voxel_field",
]
