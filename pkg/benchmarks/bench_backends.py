"""Benchmark the numba kernels against the pure-numpy fallback.

Workloads are sized like a training step on the default desk-scale corpus
(batch of 40 utterances, ~16 segments each, 4-10 frames per segment, dim 16)
and a larger stress size. The first numba call per dtype compiles (cached on
disk); timings below exclude it.

Run: python benchmarks/bench_backends.py
"""

import time

import numpy as np

from xpq import kernels


def make_pool_workload(rng, n_segments, frames_per_segment, dim, n_rows):
    durations = rng.integers(frames_per_segment[0], frames_per_segment[1] + 1, n_segments)
    total = int(durations.sum())
    features = rng.standard_normal((total, dim)).astype(np.float32)
    starts = np.zeros(n_segments, dtype=np.int64)
    ends = np.zeros(n_segments, dtype=np.int64)
    cursor = 0
    for i, d in enumerate(durations):
        starts[i], ends[i] = cursor, cursor + int(d)
        cursor += int(d)
    rows = rng.integers(0, n_rows, n_segments)
    return features, starts, ends, rows, n_rows


def make_residual_workload(rng, n_frames, dim, n_rows):
    frames = rng.standard_normal((n_frames, dim)).astype(np.float32)
    rows = rng.integers(0, n_rows, n_frames)
    preds = rng.standard_normal((n_rows, dim)).astype(np.float32)
    return frames, rows, preds


def bench(fn, args, repeats):
    fn(*args)  # warmup (and numba compile on first use)
    t0 = time.perf_counter()
    for _ in range(repeats):
        out = fn(*args)
    return (time.perf_counter() - t0) / repeats, out


def run(name, args, repeats):
    results = {}
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        fn = kernels.segment_pool if name == "segment_pool" else kernels.frame_residual_stats
        results[backend] = bench(fn, args, repeats)
    for backend, (dt, _) in sorted(results.items()):
        print(f"  {backend:<6} {dt * 1e6:9.1f} us/call")
    if len(results) == 2:
        (t_nb, out_nb), (t_np, out_np) = results["numba"], results["numpy"]
        speedup = t_np / t_nb
        if name == "segment_pool":
            agree = np.allclose(out_nb[0], out_np[0], rtol=1e-10) and np.array_equal(
                out_nb[1], out_np[1]
            )
        else:
            agree = np.isclose(out_nb[0], out_np[0], rtol=1e-10) and np.allclose(
                out_nb[1], out_np[1], rtol=1e-10, atol=1e-12
            )
        print(f"  numba speedup: {speedup:5.1f}x   outputs agree: {agree}")


def main():
    rng = np.random.default_rng(0)
    saved = kernels.get_backend()
    print(f"available backends: {', '.join(kernels.available_backends())}")
    try:
        print("\nsegment_pool, one utterance (16 segments, dim 16):")
        run("segment_pool", make_pool_workload(rng, 16, (4, 10), 16, 20), repeats=2000)

        print("\nsegment_pool, stress (512 segments, dim 64):")
        run("segment_pool", make_pool_workload(rng, 512, (8, 24), 64, 40), repeats=200)

        print("\nframe_residual_stats, one loss group (~900 frames, dim 16):")
        run("frame_residual_stats", make_residual_workload(rng, 900, 16, 20), repeats=2000)

        print("\nframe_residual_stats, 64-shot bundle (~7200 frames, dim 16):")
        run("frame_residual_stats", make_residual_workload(rng, 7200, 16, 20), repeats=500)
    finally:
        kernels.set_backend(saved)


if __name__ == "__main__":
    main()
