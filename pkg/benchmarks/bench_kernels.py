"""Compare the compiled and pure-Python clipping kernels on a graded slit mesh.

Usage: python benchmarks/bench_kernels.py [--target-h 0.05] [--repeat 5]
"""

import argparse
import time

import numpy as np

from cracktip import kernels
from cracktip.geometry import make_crack
from cracktip.mesh import MeshConfig, mesh_disk_with_crack


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--target-h", type=float, default=0.05)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()

    K = make_crack("segment", endpoints=[(-1.0, 0.0), (0.0, 0.0)])
    T = mesh_disk_with_crack(K, MeshConfig(target_h=args.target_h))
    impls = kernels.implementations()
    print(f"mesh: {T.n_vertices} vertices, {T.n_triangles} triangles; default backend {kernels.BACKEND}")
    cases = [((0.0, 0.0), 0.3), ((0.1, -0.05), 0.05), ((0.0, 0.0), 0.9)]
    for name in ("tri_disk_areas", "tri_circle_arcs"):
        for center, r in cases:
            times, outs = {}, {}
            for key, impl in impls.items():
                fn = getattr(kernels, name)
                times[key], outs[key] = best_of(lambda: fn(T.vertices, T.triangles, center, r, impl=impl),
                                                args.repeat)
            line = f"{name:16s} c={center} r={r:<5g}" + "".join(
                f"  {k}: {1e3 * t:8.2f} ms" for k, t in times.items())
            if "cython" in times:
                line += f"  speedup {times['python'] / times['cython']:6.1f}x"
                a, b = outs["python"], outs["cython"]
                if name == "tri_disk_areas":
                    err = float(np.abs(a - b).max())
                else:
                    err = max(float(np.abs(x - y).max()) if len(x) else 0.0 for x, y in zip(a, b))
                line += f"  max diff {err:.1e}"
            print(line)


if __name__ == "__main__":
    main()
