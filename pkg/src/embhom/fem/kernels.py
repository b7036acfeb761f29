"""Assembly-free stiffness products over element tables.

Each element e carries dofs ``edofs[e]`` (24 entries) and a material id into a
table of 24x24 element matrices. The numba kernel loops over elements; the
numpy fallback gathers, multiplies per material group and scatters with
``np.bincount``. ``EMBHOM_NO_NUMBA=1`` forces the fallback.
"""

import numpy as np

from .._accel import HAVE_NUMBA, njit, use_numba


@njit(cache=True, nogil=True)
def _matvec_numba(u, edofs, mat_id, ke, out):
    out[:] = 0.0
    ue = np.empty(24)
    for e in range(edofs.shape[0]):
        K = ke[mat_id[e]]
        d = edofs[e]
        for b in range(24):
            ue[b] = u[d[b]]
        for a in range(24):
            s = 0.0
            for b in range(24):
                s += K[a, b] * ue[b]
            out[d[a]] += s
    return out


@njit(cache=True, nogil=True)
def _element_energy_numba(u, edofs, mat_id, ke, out):
    ue = np.empty(24)
    for e in range(edofs.shape[0]):
        K = ke[mat_id[e]]
        d = edofs[e]
        for b in range(24):
            ue[b] = u[d[b]]
        s = 0.0
        for a in range(24):
            t = 0.0
            for b in range(24):
                t += K[a, b] * ue[b]
            s += ue[a] * t
        out[e] = s
    return out


class ElementOperator:
    """y = K u for K = sum_e P_e^T ke[mat_id[e]] P_e, never assembled."""

    def __init__(self, edofs, mat_id, ke, ndof, backend=None):
        self.edofs = np.ascontiguousarray(edofs, dtype=np.int64)
        self.mat_id = np.ascontiguousarray(mat_id, dtype=np.int64)
        self.ke = np.ascontiguousarray(ke, dtype=float)
        self.ndof = int(ndof)
        if backend is None:
            backend = "numba" if use_numba() else "numpy"
        if backend == "numba" and not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        self.backend = backend
        self._groups = [(m, np.flatnonzero(self.mat_id == m)) for m in np.unique(self.mat_id)]
        self._flat = self.edofs.ravel()

    def matvec(self, u):
        u = np.ascontiguousarray(u, dtype=float)
        if self.backend == "numba":
            return _matvec_numba(u, self.edofs, self.mat_id, self.ke, np.empty(self.ndof))
        ue = u[self.edofs]
        ye = np.empty_like(ue)
        for m, idx in self._groups:
            ye[idx] = ue[idx] @ self.ke[m]  # element matrices are symmetric
        return np.bincount(self._flat, weights=ye.ravel(), minlength=self.ndof)

    def element_energies(self, u):
        """u_e^T K_e u_e for every element."""
        u = np.ascontiguousarray(u, dtype=float)
        if self.backend == "numba":
            return _element_energy_numba(u, self.edofs, self.mat_id, self.ke, np.empty(len(self.mat_id)))
        ue = u[self.edofs]
        out = np.empty(len(self.mat_id))
        for m, idx in self._groups:
            out[idx] = np.einsum("ea,ea->e", ue[idx] @ self.ke[m], ue[idx])
        return out

    def diagonal(self):
        d = np.diagonal(self.ke, axis1=1, axis2=2)[self.mat_id]
        return np.bincount(self._flat, weights=d.ravel(), minlength=self.ndof)

    def scatter(self, fe):
        """Sum element vectors fe (nel, 24) into a global vector."""
        return np.bincount(self._flat, weights=np.asarray(fe).ravel(), minlength=self.ndof)
