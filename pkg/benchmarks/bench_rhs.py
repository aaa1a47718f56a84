"""Time the registration stencil under both backends.

    python3 benchmarks/bench_rhs.py --N 161 --repeat 50
"""
import argparse
import timeit

import numpy as np

from cwmeter import dynamics as dyn
from cwmeter import kernels
from cwmeter.core import ApparatusParams, BlochState, init_joint_field


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--N", type=int, default=161)
    ap.add_argument("--g", type=float, default=0.4)
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()

    A = ApparatusParams(N=args.N, g=args.g)
    f = init_joint_field(BlochState(0.6, 0.0, 0.8), A, A)
    op = dyn.registration_operator(A, A)
    rhs_args = (*op.coef0, *op.coef1, op.dot0, op.dot1, op.norm, op.c0, op.c1)
    P, C = f.P.copy(), f.Cu.copy()
    out = {}
    backends = {"numpy": kernels.stencil_rhs_numpy}
    if kernels.stencil_rhs_numba is not None:
        backends["numba"] = kernels.stencil_rhs_numba
    for name, fn in backends.items():
        dP, dC = np.empty_like(P), np.empty_like(C)
        fn(P, C, *rhs_args, dP, dC)  # warm-up (and JIT compile)
        t = min(timeit.repeat(lambda: fn(P, C, *rhs_args, dP, dC), number=args.repeat, repeat=3))
        out[name] = (t / args.repeat, dP.copy(), dC.copy())
        print(f"{name:6s} {1e3 * out[name][0]:8.3f} ms per call  (grid {P.shape[0]}x{P.shape[1]})")
    if len(out) == 2:
        dmax = max(np.abs(out["numpy"][1] - out["numba"][1]).max(),
                   np.abs(out["numpy"][2] - out["numba"][2]).max())
        print(f"speedup {out['numpy'][0] / out['numba'][0]:.1f}x, max |difference| {dmax:.3e}")


if __name__ == "__main__":
    main()
