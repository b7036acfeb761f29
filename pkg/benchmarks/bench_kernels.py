"""Time the element-loop stiffness product with the numba and numpy backends.

    python benchmarks/bench_kernels.py [--nx 32 48] [--repeat 5]
"""

import argparse
import time

import numpy as np

from embhom.fem.kernels import ElementOperator
from embhom.fem.mesh import TruncatedBoxMesh, element_dofs, element_stiffness
from embhom.tensor import IsoModuli, iso_to_full


def build(nx, L=4.0, backend="numpy"):
    mesh = TruncatedBoxMesh(L, nx)
    D = np.stack([iso_to_full(IsoModuli(5.0, 1.0)), iso_to_full(IsoModuli(7.0, 2.0))])
    mat = (np.arange(nx**3) % 2).astype(np.int64)
    return ElementOperator(element_dofs(nx), mat, element_stiffness(D, mesh.h), 3 * mesh.n_nodes, backend=backend)


def bench(op, u, repeat):
    op.matvec(u)  # warm-up (numba compilation)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        op.matvec(u)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--nx", type=int, nargs="+", default=[24, 32, 48])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    print(f"{'nx':>4} {'dofs':>9} {'numba [ms]':>11} {'numpy [ms]':>11} {'speedup':>8} {'max diff':>9}")
    for nx in args.nx:
        a, b = build(nx, backend="numba"), build(nx, backend="numpy")
        u = np.random.default_rng(0).normal(size=a.ndof)
        diff = np.abs(a.matvec(u) - b.matvec(u)).max()
        ta, tb = bench(a, u, args.repeat), bench(b, u, args.repeat)
        print(f"{nx:>4} {a.ndof:>9} {1e3 * ta:>11.2f} {1e3 * tb:>11.2f} {tb / ta:>8.2f} {diff:>9.1e}")


if __name__ == "__main__":
    main()
