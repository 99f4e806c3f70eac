"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --repeat 20

Reports the median wall time per call for each kernel and backend, the
speedup, and how far apart the two backends' outputs are. Everything is
bitwise equal except the depthwise weight gradient, a float32 reduction
whose summation order differs between the backends.
"""

import argparse
import statistics
import time

import numpy as np

from clrnet import kernels

CASES = {
    "im2col": lambda x, w, g: (lambda: kernels.im2col(x, 3, 3, 1, 1)),
    "col2im": lambda x, w, g: (lambda c=kernels.im2col(x, 3, 3, 1, 1): kernels.col2im(c, x.shape, 3, 3, 1, 1)),
    "depthwise_forward": lambda x, w, g: (lambda: kernels.depthwise_forward(x, w, 1)),
    "depthwise_backward": lambda x, w, g: (lambda: kernels.depthwise_backward(x, w, 1, g)),
    "maxpool_forward": lambda x, w, g: (lambda: kernels.maxpool_forward(x, 2, 2, 0)),
}


def median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _flat(out):
    parts = out if isinstance(out, tuple) else (out,)
    return [np.asarray(p) for p in parts if p is not None]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--channels", type=int, default=32)
    ap.add_argument("--size", type=int, default=28)
    ap.add_argument("--repeat", type=int, default=10)
    args = ap.parse_args(argv)

    if not kernels.compiled_available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.Generator(np.random.PCG64(0))
    x = rng.standard_normal((args.batch, args.channels, args.size, args.size)).astype(np.float32)
    w = rng.standard_normal((args.channels, 3, 3)).astype(np.float32)
    g = rng.standard_normal(x.shape).astype(np.float32)

    print(f"input {x.shape} float32, median of {args.repeat}")
    print(f"{'kernel':<20}{'python ms':>12}{'cython ms':>12}{'speedup':>10}  max |diff| per output")
    previous = kernels.backend_name()
    try:
        for name, build in CASES.items():
            timings, outputs = {}, {}
            for backend in ("python", "cython"):
                kernels.use_backend(backend)
                fn = build(x, w, g)
                timings[backend] = median_time(fn, args.repeat)
                outputs[backend] = _flat(fn())
            diffs = " ".join(f"{float(np.abs(a.astype(np.float64) - b).max()):.1e}"
                             for a, b in zip(outputs["python"], outputs["cython"]))
            py, cy = timings["python"] * 1e3, timings["cython"] * 1e3
            print(f"{name:<20}{py:>12.3f}{cy:>12.3f}{py / cy:>9.2f}x  {diffs}")
    finally:
        kernels.use_backend(previous)


if __name__ == "__main__":
    main()
