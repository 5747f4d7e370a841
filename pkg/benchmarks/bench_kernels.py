"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Every timed call is also cross-checked: both backends must return identical
arrays, otherwise the script exits non-zero.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from seqnav.kernels import available_backends
from seqnav.mapping import TourMap
from seqnav.world import MAX_RANGE, RESOLUTION, SceneSpec, generate_scene, ray_bearings, ray_directions


def _cases(seed=0):
    rng = np.random.default_rng(seed)
    scene = generate_scene(seed, SceneSpec(n_rooms=6, n_landmarks=14, room_min=10, room_max=14))
    free = np.argwhere(scene.occupancy == 0)
    r, c = free[len(free) // 2]
    x0, y0 = float(c) * RESOLUTION, float(r) * RESOLUTION
    dxs, dys = ray_directions(37.0, ray_bearings())
    dense = ray_directions(37.0, np.linspace(-180.0, 180.0, 720, endpoint=False))
    short = rng.normal(size=(40, 2)).cumsum(0), rng.normal(size=(40, 2)).cumsum(0)
    long_ = rng.normal(size=(400, 2)).cumsum(0), rng.normal(size=(400, 2)).cumsum(0)
    return scene, (x0, y0), (dxs, dys), dense, short, long_


def _integrate(mod, scene, origin, rays):
    dxs, dys = rays
    dists, rows, cols = mod.cast_rays(scene.occupancy, RESOLUTION, origin[0], origin[1], dxs, dys, MAX_RANGE)
    classes = np.where(rows >= 0, scene.semantics[np.clip(rows, 0, None), np.clip(cols, 0, None)], 0).astype(np.int64)
    tm = TourMap()
    r, c = scene.cell_of(origin)
    reach = int(np.ceil(MAX_RANGE / RESOLUTION)) + 2
    tm.ensure(r - reach, c - reach, r + reach, c + reach)
    n = mod.integrate_rays(tm.occupancy, tm.semantics, tm.row_off, tm.col_off, RESOLUTION, origin[0], origin[1],
                           dxs, dys, dists, classes, MAX_RANGE)
    return n, tm.occupancy, tm.semantics


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write timings here")
    args = ap.parse_args(argv)

    backends = available_backends()
    scene, origin, fov, dense, short, long_ = _cases()
    jobs = {
        "dtw 40x40": lambda m: m.dtw_cost(*short),
        "dtw 400x400": lambda m: m.dtw_cost(*long_),
        "cast_rays 46": lambda m: m.cast_rays(scene.occupancy, RESOLUTION, *origin, *fov, MAX_RANGE),
        "cast_rays 720": lambda m: m.cast_rays(scene.occupancy, RESOLUTION, *origin, *dense, MAX_RANGE),
        "integrate 46": lambda m: _integrate(m, scene, origin, fov),
        "integrate 720": lambda m: _integrate(m, scene, origin, dense),
    }
    rows, failed = [], False
    for name, fn in jobs.items():
        outs = {b: fn(m) for b, m in backends.items()}
        ref = outs["python"]
        for b, out in outs.items():
            same = all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in
                       zip(out if isinstance(out, tuple) else (out,), ref if isinstance(ref, tuple) else (ref,)))
            if not same:
                print(f"MISMATCH {name}: {b} differs from python", file=sys.stderr)
                failed = True
        row = {"kernel": name}
        for b, m in backends.items():
            t = timeit.Timer(lambda: fn(m))
            n, _ = t.autorange()
            best = min(t.repeat(repeat=args.repeat, number=n)) / n
            row[b] = best
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
        rows.append(row)

    names = list(backends)
    print(f"{'kernel':<16}" + "".join(f"{b:>14}" for b in names) + ("   speedup" if "cython" in names else ""))
    for r in rows:
        line = f"{r['kernel']:<16}" + "".join(f"{r[b] * 1e6:>11.1f} us" for b in names)
        if "speedup" in r:
            line += f"   {r['speedup']:7.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
