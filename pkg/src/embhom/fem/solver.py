"""Embedded corrector problem on a truncated box, and the periodic cell problem.

The corrector w solves a(w, v) = b(v) for all v vanishing on the boundary of
[-L, L]^3, with

    a(w, v) = int e(v) . Acal e(w)          (Acal = field in B, exterior outside)
    b(v)    = int_B e(v) . ((A - field) sigma)

The load is the volumetric form of the sphere traction term: for constant A
and sigma, int_S v . (A sigma) n = int_B e(v) . A sigma.

Ball integrals are normalized by the discrete ball volume |B_h| (the total
volume of elements assigned to B), so that constant fields are reproduced
exactly.
"""

import hashlib
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .._accel import max_workers
from ..tensor import DomainError, EllipticityBand, in_class_M, to_mandel
from .kernels import ElementOperator
from .mesh import (
    TruncatedBoxMesh,
    check_alignment,
    element_dofs,
    element_stiffness,
    gauss_weight,
    mean_strain_matrix,
    shape_gradients,
    voxel_lookup,
)
from .voxel import VoxelField


class SolverError(RuntimeError):
    """CG did not reach the requested tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverConfig:
    cg_tol: float = 1e-8
    cg_max_iter: int = 5000
    L: float = 4.0
    nx: int = 48
    preconditioner: str = "diagonal"

    def __post_init__(self):
        if not self.cg_tol > 0:
            raise ValueError("cg_tol must be positive")
        if self.preconditioner not in ("none", "diagonal"):
            raise ValueError("preconditioner must be 'none' or 'diagonal'")
        if self.cg_max_iter < 1:
            raise ValueError("cg_max_iter must be >= 1")

    @property
    def h(self):
        return 2.0 * self.L / self.nx


def _fingerprint(*arrays):
    hsh = hashlib.blake2b(digest_size=16)
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=float)
        hsh.update(str(a.shape).encode())
        hsh.update(a.tobytes())
    return hsh.hexdigest()


def _sigma(sigma):
    s = np.asarray(sigma, dtype=float)
    return to_mandel(s) if s.shape == (3, 3) else s.reshape(6)


@dataclass
class SolveStats:
    iterations: int = 0
    residual: float = 0.0
    seconds: float = 0.0


def _cg(op, rhs, free, cfg, x0=None):
    """Preconditioned CG on the free dofs; returns the full dof vector."""
    nfree = int(free.sum())
    full = np.zeros(op.ndof)
    b = rhs[free]
    bnorm = np.linalg.norm(b)
    stats = SolveStats()
    t0 = time.perf_counter()
    if bnorm == 0.0:
        stats.seconds = time.perf_counter() - t0
        return full, stats

    def mv(x):
        full[free] = x
        return op.matvec(full)[free]

    A = LinearOperator((nfree, nfree), matvec=mv, dtype=float)
    M = None
    if cfg.preconditioner == "diagonal":
        dinv = 1.0 / op.diagonal()[free]
        M = LinearOperator((nfree, nfree), matvec=lambda r: dinv * r, dtype=float)

    count = [0]

    def cb(_):
        count[0] += 1

    x0f = None if x0 is None else np.asarray(x0)[free]
    x, _info = cg(A, b, x0=x0f, rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_max_iter, M=M, callback=cb)
    res = np.linalg.norm(b - mv(x)) / bnorm
    stats.iterations, stats.residual = count[0], float(res)
    stats.seconds = time.perf_counter() - t0
    # the preconditioned stopping test can stop a hair above the true residual
    if not np.isfinite(res) or res > 10 * cfg.cg_tol:
        raise SolverError("CG did not converge", float(res), count[0])
    out = np.zeros(op.ndof)
    out[free] = x
    return out, stats


class EmbeddedProblem:
    """Discretized operator for one (field, exterior tensor, mesh) triple.

    Reused across loads sigma; build it once and call :meth:`solve` per load.
    """

    def __init__(self, field: VoxelField, exterior, cfg: SolverConfig):
        exterior = np.asarray(exterior, dtype=float)
        # root finders may probe the extended band
        b = field.band
        ext_band = EllipticityBand(b.alpha_minus, b.beta_plus, 0.5 * b.alpha_minus, 2 * b.beta_plus)
        if not in_class_M(exterior, ext_band):
            raise DomainError("exterior tensor outside the extended ellipticity band")
        self.field = field
        self.exterior = exterior
        self.cfg = cfg
        self.mesh = TruncatedBoxMesh(cfg.L, cfg.nx)
        check_alignment(self.mesh, field.n)
        h = self.mesh.h

        centers = self.mesh.element_centers()
        vidx, in_cube = voxel_lookup(centers, field.n)
        vox_in_ball = field.in_ball()
        ball = in_cube & vox_in_ball[vidx[:, 0], vidx[:, 1], vidx[:, 2]]
        self.in_ball = ball

        local = field.tensors[vidx[ball, 0], vidx[ball, 1], vidx[ball, 2]]
        table, inv = np.unique(local.reshape(-1, 36), axis=0, return_inverse=True)
        table = table.reshape(-1, 6, 6)
        for t in table:
            if not in_class_M(t, field.band):
                raise DomainError("voxel tensor outside the ellipticity band")
        self.D = np.concatenate([exterior[None], table])
        self.mat_id = np.zeros(len(centers), dtype=np.int64)
        self.mat_id[ball] = 1 + inv.reshape(-1)

        self.op = ElementOperator(element_dofs(self.mesh.nx), self.mat_id, element_stiffness(self.D, h), 3 * self.mesh.n_nodes)
        self.Bbar = mean_strain_matrix(h)
        self.vol_e = h**3
        self.vol_ball = self.vol_e * ball.sum()
        self.free = np.repeat(~self.mesh.boundary_nodes(), 3)
        self.key = _fingerprint(field.tensors, exterior, [cfg.L, cfg.nx])

    def load(self, sigma):
        s = _sigma(sigma)
        ids = self.mat_id[self.in_ball]
        stress = (self.exterior - self.D[ids]) @ s  # (nball, 6)
        fe = np.zeros((len(self.mat_id), 24))
        fe[self.in_ball] = stress @ self.Bbar
        return self.op.scatter(fe)

    def solve(self, sigma, x0=None):
        s = _sigma(sigma)
        u, stats = _cg(self.op, self.load(s), self.free, self.cfg, x0=x0)
        return DiscreteDisplacement(u, self._ball_mean(u), self, s, stats)

    def _ball_mean(self, u):
        ue = u[self.op.edofs[self.in_ball]].reshape(-1, 8, 3)
        # each trilinear shape function integrates to vol_e / 8 over its element
        return ue.sum(axis=(0, 1)) * (self.vol_e / 8.0) / self.vol_ball

    def element_mean_strains(self, u):
        """int_e e(w) for every element: (nel, 6)."""
        return u[self.op.edofs] @ self.Bbar.T


@dataclass
class DiscreteDisplacement:
    """Nodal corrector values.

    ``values`` vanish on the truncation boundary; ``offset`` is the constant
    that moves the field to zero mean over B. :meth:`gauged` returns the
    shifted nodal field. Strains and energies do not depend on the shift.
    """

    values: np.ndarray
    offset: np.ndarray
    problem: object
    sigma: np.ndarray
    stats: SolveStats = dc_field(default_factory=SolveStats)

    def nodal(self):
        return self.values.reshape(-1, 3)

    def gauged(self):
        return self.nodal() - self.offset


_CACHE = OrderedDict()
_CACHE_SIZE = 4


def embedded_problem(field: VoxelField, exterior, cfg: SolverConfig) -> EmbeddedProblem:
    """Build or fetch a cached :class:`EmbeddedProblem`."""
    key = (_fingerprint(field.tensors, exterior, [cfg.L, cfg.nx, field.band.alpha, field.band.beta]), cfg)
    prob = _CACHE.get(key)
    if prob is None:
        prob = EmbeddedProblem(field, exterior, cfg)
        _CACHE[key] = prob
        while len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    else:
        _CACHE.move_to_end(key)
    return prob


def solve_embedded(field: VoxelField, exterior, sigma, cfg: SolverConfig, x0=None) -> DiscreteDisplacement:
    return embedded_problem(field, exterior, cfg).solve(sigma, x0=x0)


def _check(w, field, sigma):
    if w.problem.field is not field and w.problem.field.n != field.n:
        raise ValueError("displacement was computed for a different field")
    if sigma is not None and not np.allclose(_sigma(sigma), w.sigma):
        raise ValueError("displacement was computed for a different load")


def energy_primal(field, exterior, sigma, w: DiscreteDisplacement):
    """(1/|B|)[int_B s.As - int e(w).Acal e(w)]."""
    _check(w, field, sigma)
    p, s = w.problem, w.sigma
    ids = p.mat_id[p.in_ball]
    bulk = p.vol_e * np.einsum("i,nij,j->", s, p.D[ids], s)
    return float((bulk - p.op.element_energies(w.values).sum()) / p.vol_ball)


def energy_flux(field, exterior, sigma, w: DiscreteDisplacement):
    """(1/|B|)[int_B s.A(s + e(w)) - int_B e(w).(A_ext s)]."""
    _check(w, field, sigma)
    p, s = w.problem, w.sigma
    ids = p.mat_id[p.in_ball]
    eint = p.element_mean_strains(w.values)[p.in_ball]
    flux_part = np.einsum("i,nij,nj->", s, p.D[ids], p.vol_e * s + eint)
    return float((flux_part - eint.sum(axis=0) @ (p.exterior @ s)) / p.vol_ball)


def flux_average(field, sigma, w: DiscreteDisplacement):
    """(1/|B|) int_B A(s + e(w)) as a Mandel vector."""
    _check(w, field, sigma)
    p, s = w.problem, w.sigma
    ids = p.mat_id[p.in_ball]
    eint = p.element_mean_strains(w.values)[p.in_ball]
    return np.einsum("nij,nj->i", p.D[ids], p.vol_e * s + eint) / p.vol_ball


def mean_strain(w: DiscreteDisplacement):
    """(1/|B|) int_B e(w), Mandel vector."""
    p = w.problem
    return p.element_mean_strains(w.values)[p.in_ball].sum(axis=0) / p.vol_ball


def residual(w: DiscreteDisplacement):
    """Relative residual of the discrete system on the free dofs."""
    p = w.problem
    r = (p.load(w.sigma) - p.op.matvec(w.values))[p.free]
    b = np.linalg.norm(p.load(w.sigma)[p.free])
    return float(np.linalg.norm(r) / b) if b > 0 else float(np.linalg.norm(r))


def solve_basis(field, exterior, cfg: SolverConfig, loads):
    """Solve several loads on one operator, concurrently up to HOMOG_THREADS."""
    prob = embedded_problem(field, exterior, cfg)
    workers = min(max_workers(), len(loads))
    if workers <= 1:
        return [prob.solve(s) for s in loads]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(prob.solve, loads))


def truncation_table(field, exterior, sigma, cfg: SolverConfig, Ls=(2.0, 3.0, 4.0), reference=None):
    """Energy as a function of the box half-width L at the fixed mesh size of ``cfg``.

    Returns one row per L with the energy, the change from the previous row,
    and the error relative to ``reference`` when one is given. No rate is
    fitted; the table is meant to be read.
    """
    h = 2 * cfg.L / cfg.nx
    rows, prev = [], None
    for L in Ls:
        nx = int(round(2 * L / h))
        sub = replace(cfg, L=float(L), nx=nx)
        w = solve_embedded(field, exterior, sigma, sub)
        e = energy_primal(field, exterior, sigma, w)
        row = {"L": float(L), "nx": nx, "energy": e, "change": None if prev is None else abs(e - prev),
               "iterations": w.stats.iterations}
        if reference is not None:
            row["rel_error"] = abs(e - reference) / abs(reference)
        rows.append(row)
        prev = e
    return rows


# ----------------------------------------------------------------------------
# discrete Korn and ellipticity diagnostics


@dataclass
class StrainReport:
    grad_norm: float  # ||grad w||_{L2}
    sym_norm: float  # ||e(w)||_{L2}
    div_norm: float
    max_pointwise_sym_ratio: float  # max |e(w)| / |grad w| at Gauss points
    max_pointwise_div_ratio: float  # max |div w| / (sqrt(3) |grad w|)
    energy: float  # int e(w) . Acal e(w)
    alpha_bound: float  # alpha ||e(w)||^2
    beta_bound: float  # beta ||e(w)||^2


def _gauss_gradients(u, edofs, h, chunk=20000):
    G = shape_gradients(h)
    for start in range(0, len(edofs), chunk):
        ue = u[edofs[start:start + chunk]].reshape(-1, 8, 3)
        yield np.einsum("eac,gad->egcd", ue, G)


def strain_report(w: DiscreteDisplacement) -> StrainReport:
    p = w.problem
    return _strain_report(w.values, p.op, p.mesh.h, p.field.band)


def _strain_report(u, op, h, band):
    wq = gauss_weight(h)
    g2 = s2 = d2 = 0.0
    rs = rd = 0.0
    for grad in _gauss_gradients(u, op.edofs, h):
        sym = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        gn = np.sum(grad**2, axis=(-1, -2))
        sn = np.sum(sym**2, axis=(-1, -2))
        dv = np.trace(grad, axis1=-2, axis2=-1) ** 2
        g2 += wq * gn.sum()
        s2 += wq * sn.sum()
        d2 += wq * dv.sum()
        nz = gn > 1e-300
        if nz.any():
            rs = max(rs, float(np.sqrt(sn[nz] / gn[nz]).max()))
            rd = max(rd, float(np.sqrt(dv[nz] / (3 * gn[nz])).max()))
    energy = float(op.element_energies(u).sum())
    return StrainReport(
        float(np.sqrt(g2)), float(np.sqrt(s2)), float(np.sqrt(d2)), rs, rd, energy, band.alpha * s2, band.beta * s2
    )


# ----------------------------------------------------------------------------
# periodic cell problem


class PeriodicProblem:
    """Trilinear FEM on the periodic cell [-1, 1]^3 at element size ``2 / ne``."""

    def __init__(self, field: VoxelField, ne: int, cfg: SolverConfig):
        if ne % field.n:
            raise ValueError(f"{ne} elements per axis do not resolve a {field.n}^3 voxel grid")
        self.field, self.cfg, self.ne = field, cfg, ne
        h = 2.0 / ne
        table, inv = field.unique_tensors()
        for t in table:
            if not in_class_M(t, field.band):
                raise DomainError("voxel tensor outside the ellipticity band")
        r = ne // field.n
        i, j, k = np.meshgrid(*(np.arange(ne) // r,) * 3, indexing="ij")
        vox = ((i * field.n + j) * field.n + k).ravel()
        self.D = table
        self.mat_id = inv[vox]
        self.op = ElementOperator(element_dofs(ne, periodic=True), self.mat_id, element_stiffness(table, h), 3 * ne**3)
        self.Bbar = mean_strain_matrix(h)
        self.vol_e = h**3
        self.free = np.ones(self.op.ndof, bool)
        self.free[:3] = False  # pin node 0

    def solve(self, sigma, x0=None):
        s = _sigma(sigma)
        fe = -(self.D[self.mat_id] @ s) @ self.Bbar
        u, stats = _cg(self.op, self.op.scatter(fe), self.free, self.cfg, x0=x0)
        nodal = u.reshape(-1, 3)
        # periodic trilinear fields integrate to h^3 times the nodal sum
        nodal -= nodal.mean(axis=0)
        eint = u[self.op.edofs] @ self.Bbar.T
        flux = np.einsum("nij,nj->i", self.D[self.mat_id], self.vol_e * s + eint) / 8.0
        w = DiscreteDisplacement(u, np.zeros(3), self, s, stats)
        return w, flux


def periodic_elements(field: VoxelField, cfg: SolverConfig):
    """Elements per axis on the cell at the element size of the embedded mesh."""
    ne = 2.0 / cfg.h
    r = round(ne / field.n)
    if abs(ne - r * field.n) > 1e-9 or r < 1:
        r = max(1, int(np.ceil(ne / field.n)))
    return r * field.n


def solve_periodic(cellfield: VoxelField, sigma, cfg: SolverConfig, ne=None):
    """Periodic corrector and averaged flux (a column of the periodic homogenized tensor)."""
    prob = PeriodicProblem(cellfield, ne or periodic_elements(cellfield, cfg), cfg)
    return prob.solve(sigma)


def periodic_tensor(cellfield: VoxelField, cfg: SolverConfig, ne=None):
    """Full 6x6 Mandel matrix of the periodic homogenized tensor, symmetrized."""
    prob = PeriodicProblem(cellfield, ne or periodic_elements(cellfield, cfg), cfg)
    cols = [prob.solve(e)[1] for e in np.eye(6)]
    M = np.array(cols).T
    return 0.5 * (M + M.T), float(np.abs(M - M.T).max())
