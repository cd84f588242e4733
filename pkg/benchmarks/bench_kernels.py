"""Compare the compiled kernels with the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from contact_stokes import _core_py
from contact_stokes.equilibrium import PhysicalParams, build_equilibrium
from contact_stokes.fem import build_mesh

try:
    from contact_stokes import _core
except ImportError:
    _core = None


def _inputs(n_surface):
    eq = build_equilibrium(PhysicalParams(gamma_jump=0.5))
    mesh = build_mesh(eq, n_surface)
    geo = mesh.elem_geom
    ne, nq = geo.wdet.shape
    rng = np.random.default_rng(0)
    acal = np.broadcast_to(np.eye(2), (ne, nq, 2, 2)) + 0.01 * rng.standard_normal((ne, nq, 2, 2))
    jac = 1.0 + 0.01 * rng.standard_normal((ne, nq))
    stokes = (
        np.ascontiguousarray(geo.grads),
        np.ascontiguousarray(geo.wdet),
        np.ascontiguousarray(acal),
        np.ascontiguousarray(jac),
        np.ascontiguousarray(geo.phi1),
        1.0,
    )
    npts = mesh.n_nodes
    modes = (
        rng.standard_normal(mesh.nx) / np.arange(1, mesh.nx + 1) ** 2,
        -rng.uniform(0.0, 3.0, npts),
        rng.uniform(0.0, np.pi, npts),
    )
    return stokes, modes


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64])
    args = ap.parse_args()
    if _core is None:
        print("compiled extension not built; only the NumPy fallback is timed")
    print(f"{'kernel':14s} {'n':>4s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s} {'max diff':>10s}")
    for n in args.sizes:
        stokes, modes = _inputs(n)
        for name, inp in (("local_stokes", stokes), ("mode_sum", modes)):
            py = getattr(_core_py, name)
            t_py = min(timeit.repeat(lambda: py(*inp), number=1, repeat=args.repeat)) * 1e3
            if _core is None:
                print(f"{name:14s} {n:4d} {t_py:11.2f} {'-':>12s} {'-':>8s} {'-':>10s}")
                continue
            cy = getattr(_core, name)
            t_cy = min(timeit.repeat(lambda: cy(*inp), number=1, repeat=args.repeat)) * 1e3
            diff = max(float(np.abs(a - b).max()) for a, b in zip(py(*inp), cy(*inp)))
            print(f"{name:14s} {n:4d} {t_py:11.2f} {t_cy:12.2f} {t_py / t_cy:8.1f} {diff:10.1e}")


if __name__ == "__main__":
    main()
