"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--json]
"""

import argparse
import json
import sys
import timeit

import numpy as np

from trajmae import _kernels_py as py
from trajmae.scene import arc_lengths, build_map, dynamics_params

try:
    from trajmae import _ckernels as cy
except ImportError:
    cy = None


def cases():
    rng = np.random.default_rng(0)
    g, h, lq, lk, dh = 96, 4, 10, 10, 8
    q, k, v = (rng.normal(size=(g, h, lq if i == 0 else lk, dh)) for i in range(3))
    allowed = np.ascontiguousarray(rng.random((g, lq, lk)) < 0.8)
    allowed8 = allowed.view(np.uint8)
    _, probs = py.attention_forward(q, k, v, allowed)
    dout = rng.normal(size=q.shape)
    x = rng.normal(size=(960, 32))
    xhat, rstd = py.layernorm_forward(x, 1e-5)
    dx = rng.normal(size=x.shape)

    vmap = build_map("straight", 3)
    lanes = [p.points for p in vmap.lane_centers()]
    points = np.ascontiguousarray(np.stack(lanes), dtype=np.float64)
    cum = np.ascontiguousarray(arc_lengths(points))
    m = 6
    lane = (np.arange(m) % len(lanes)).astype(np.int64)
    s0 = np.linspace(2.0, 40.0, m)
    v0 = rng.uniform(4, 12, m)
    d0 = rng.uniform(-0.3, 0.3, m)
    vd = rng.uniform(4, 12, m)
    params = np.asarray(dynamics_params(), dtype=np.float64)

    def attn_fwd(mod, mask):
        return lambda: mod.attention_forward(q, k, v, mask)

    def attn_bwd(mod):
        return lambda: mod.attention_backward(dout, q, k, v, probs)

    return [
        ("attention forward", attn_fwd(py, allowed), attn_fwd(cy, allowed8) if cy else None),
        ("attention backward", attn_bwd(py), attn_bwd(cy) if cy else None),
        ("layernorm forward", lambda: py.layernorm_forward(x, 1e-5), (lambda: cy.layernorm_forward(x, 1e-5)) if cy else None),
        ("layernorm backward", lambda: py.layernorm_backward(dx, xhat, rstd),
         (lambda: cy.layernorm_backward(dx, xhat, rstd)) if cy else None),
        ("rollout 25 steps x 6 agents",
         lambda: py.rollout(points, cum, lane, s0, v0, d0, vd, 25, 0.1, params),
         (lambda: cy.rollout(points, cum, lane, s0, v0, d0, vd, 25, 0.1, params)) if cy else None),
    ]


def best_ms(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e3


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print machine-readable results")
    args = ap.parse_args(argv)
    rows = []
    for name, f_py, f_cy in cases():
        t_py = best_ms(f_py, args.repeat)
        t_cy = best_ms(f_cy, args.repeat) if f_cy else None
        rows.append({"kernel": name, "python_ms": t_py, "cython_ms": t_cy,
                     "speedup": t_py / t_cy if t_cy else None})
    if args.json:
        json.dump(rows, sys.stdout, indent=2)
        print()
        return
    if cy is None:
        print("compiled extension not built; showing the fallback only")
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for r in rows:
        c = f"{r['cython_ms']:10.4f}" if r["cython_ms"] is not None else f"{'-':>10s}"
        s = f"{r['speedup']:8.2f}" if r["speedup"] is not None else f"{'-':>8s}"
        print(f"{r['kernel']:32s} {r['python_ms']:10.4f} {c} {s}")


if __name__ == "__main__":
    main()
