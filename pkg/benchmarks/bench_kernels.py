"""Time the compiled kernels against the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--number 2000]

Prints one line per kernel with the per-call time of each backend and the
speedup, then times one full RTR localization solve and one EKF predict
step through the public API under each backend.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from rimfusion import _core


def _cases():
    rng = np.random.default_rng(0)
    d = 0.2
    P = np.ascontiguousarray(
        np.column_stack([[0.0, d * np.sqrt(3) / 2, 0.0], [-d / 2, 0.0, 0.0], [d / 2, 0.0, 0.0]]) + 2.0
    )
    B = np.ascontiguousarray(rng.uniform(0, 5, (4, 3)))
    Y = np.ascontiguousarray(rng.normal(size=(3, 4)))
    V = np.ascontiguousarray(rng.normal(size=(3, 3)))
    Z = np.ascontiguousarray(P + 0.01 * V)
    a, w = np.array([0.1, 0.2, 9.8]), np.array([0.3, -0.2, 0.5])
    C = np.eye(3)
    x = np.concatenate([np.zeros(6), C.reshape(9, order="F")])
    Pk = np.eye(15) * 1e-2
    q = np.full(6, 0.25)
    p = np.array([1.0, 2.0, 1.0])
    y = np.ascontiguousarray(B @ p - 0.5 * p @ p)
    return {
        "cost_egrad": lambda k: k.cost_egrad(P, B, Y),
        "ehess": lambda k: k.ehess(P, B, Y, V),
        "tangent_project": lambda k: k.tangent_project(P, V),
        "rhess": lambda k: k.rhess(P, V, 0.1, 0.2, V, V),
        "retract_nearest": lambda k: k.retract_nearest(Z, d),
        "retract_scaling": lambda k: k.retract_scaling(Z, d, 1e-12),
        "transition_matrix": lambda k: k.transition_matrix(a, w, 0.01),
        "input_jacobian": lambda k: k.input_jacobian(a, w, C, 0.01),
        "ekf_predict": lambda k: k.ekf_predict(x, Pk, a, w, q, 0.01, 0.0),
        "gn_receiver": lambda k: k.gn_receiver(B, y, p + 0.1, 50, 1e-12, 1e-9),
    }


def bench_kernels(repeat, number):
    backends = _core.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the Python backend is available")
    print(f"{'kernel':<18} " + " ".join(f"{b + ' [us]':>14}" for b in backends) + "   speedup")
    for name, fn in _cases().items():
        times = []
        for b in backends:
            k = _core.get_backend(b)
            best = min(timeit.repeat(lambda: fn(k), repeat=repeat, number=number))
            times.append(best / number * 1e6)
        speed = f"{times[-1] / times[0]:8.1f}x" if len(times) == 2 else ""
        print(f"{name:<18} " + " ".join(f"{t:14.2f}" for t in times) + "  " + speed)


_END_TO_END = """
import timeit
import numpy as np
from rimfusion import _core
from rimfusion.localization import RangeSet, SolverOptions, corner_beacons, rtr_solve, vertices_from_pose, Pose
from rimfusion.manifold import ManifoldParams
params = ManifoldParams(0.2)
beacons = corner_beacons((10.0, 5.0, 3.0))
P = vertices_from_pose(Pose(np.array([4.0, 2.0, 1.2]), np.eye(3)), params)
r = np.linalg.norm(P.T[:, None, :] - beacons.B[None, :, :], axis=2)
P0 = P + 0.02
opts = SolverOptions()
n = 50
t = min(timeit.repeat(lambda: rtr_solve(beacons, RangeSet(r), P0, params, opts), repeat=3, number=n)) / n
print(f"{_core.BACKEND:<8} rtr_solve {t * 1e3:8.3f} ms")
"""


def bench_end_to_end():
    for forced in ("", "1"):
        env = dict(os.environ, RIMFUSION_PURE_PYTHON=forced)
        out = subprocess.run([sys.executable, "-c", _END_TO_END], env=env, capture_output=True, text=True)
        print(out.stdout.strip() or out.stderr.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=2000)
    args = ap.parse_args(argv)
    bench_kernels(args.repeat, args.number)
    print()
    bench_end_to_end()


if __name__ == "__main__":
    main()
