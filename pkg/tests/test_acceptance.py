"""Acceptance gate: one test per shipped guarantee.

Each criterion prints a single PASS/FAIL line with its runtime against a
pinned budget (run with ``pytest tests/test_acceptance.py -v -s`` to see
them as they complete). A criterion that needs hardware this machine
lacks prints a SKIP line with the reason instead of silently passing.
"""

import contextlib
import multiprocessing
import os
import queue
import threading
import time

import numpy as np
import pytest
from oracles import (absdiff_oracle, binary_oracle, dilate_oracle,
                     median_oracle, normalize_oracle, otsu_oracle,
                     truncate_oracle)

from icelabel import kernels
from icelabel.cloudfilter import apply_filter
from icelabel.engine import (BENCH_COLUMNS, JobSpec, bench, bench_csv,
                             run_local, run_master, run_sequential,
                             run_with_loopback_workers, run_worker)
from icelabel.metrics import (SSIM_C1, ConfusionMatrix, confusion, report,
                              ssim)
from icelabel.raster import ClassId, SceneRaster, convert_raster
from icelabel.segmentation import get_preset, segment
from icelabel.synth import generate_corpus
from icelabel.tiling import split_scene, stitch_scene

SCHEME = get_preset("ross-sea-summer")


@contextlib.contextmanager
def criterion(name, budget_s):
    """Times the block and prints one verdict line, budget included."""
    t0 = time.perf_counter()
    ok = False
    try:
        yield
        elapsed = time.perf_counter() - t0
        if elapsed >= budget_s:
            raise AssertionError(
                f"{name}: runtime {elapsed:.2f}s exceeds the {budget_s:.0f}s budget")
        ok = True
    finally:
        elapsed = time.perf_counter() - t0
        print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} "
              f"({elapsed:.2f}s, budget {budget_s:.0f}s)")


def exactly_one_class(raster):
    hsv = convert_raster(raster).data
    per_class = np.stack([r.contains(hsv) for r in SCHEME.ranges])
    return (per_class.sum(axis=0) == 1).all()


def test_segmentation_total_with_pinned_boundaries():
    with criterion("segmentation-totality", 1.0):
        sweep = SceneRaster(
            np.repeat(np.arange(256, dtype=np.uint8), 3).reshape(256, 1, 3),
            "sweep")
        assert exactly_one_class(sweep)
        labels = segment(sweep, SCHEME).data[:, 0]
        assert (labels[:31] == ClassId.OPEN_WATER).all()
        assert (labels[31:205] == ClassId.THIN_ICE).all()
        assert (labels[205:] == ClassId.THICK_ICE).all()
        # the two fences, stated explicitly
        assert labels[30] == ClassId.OPEN_WATER and labels[31] == ClassId.THIN_ICE
        assert labels[204] == ClassId.THIN_ICE and labels[205] == ClassId.THICK_ICE
        # arbitrary colors still land in exactly one class
        rng = np.random.default_rng(9)
        for _ in range(8):
            img = SceneRaster(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8))
            segment(img, SCHEME)
            assert exactly_one_class(img)


def test_kernels_match_bruteforce_oracles():
    with criterion("kernel-oracles", 30.0):
        rng = np.random.default_rng(404)
        for i in range(1000):
            a = rng.integers(0, 256, (16, 16), dtype=np.uint8)
            b = rng.integers(0, 256, (16, 16), dtype=np.uint8)
            k = 3 + 2 * (i % 3)
            t = int(rng.integers(0, 256))
            assert np.array_equal(kernels.median_blur(a, k), median_oracle(a, k))
            assert np.array_equal(kernels.dilate(a, k), dilate_oracle(a, k))
            assert np.array_equal(kernels.absdiff(a, b), absdiff_oracle(a, b))
            assert np.array_equal(kernels.threshold_binary(a, t), binary_oracle(a, t))
            assert np.array_equal(kernels.threshold_truncate(a, t),
                                  truncate_oracle(a, t))
            assert np.array_equal(kernels.minmax_normalize(a), normalize_oracle(a))
            assert kernels.otsu_threshold(a) == otsu_oracle(a)


def test_filter_recovers_hazy_scene_accuracy():
    with criterion("filter-benefit", 120.0):
        scenes = generate_corpus(101, 64, 0.3, size=256)
        assert sum(s.hazy for s in scenes) == 19
        raw_total = filtered_total = None
        for s in scenes:
            out = apply_filter(s.raster)
            off = out.cloud_shadow_mask == 0
            assert np.array_equal(out.filtered.data[off], s.raster.data[off]), \
                f"{s.scene_id}: pixels outside the mask changed"
            raw = confusion(segment(s.raster, SCHEME), s.labels)
            filt = confusion(segment(out.filtered, SCHEME), s.labels)
            raw_total = raw if raw_total is None else raw_total + raw
            filtered_total = filt if filtered_total is None else filtered_total + filt
        raw_acc = report(raw_total).accuracy
        filtered_acc = report(filtered_total).accuracy
        gain = filtered_acc - raw_acc
        assert gain >= 0.05, (f"accuracy gain {gain:.4f} < 0.05 "
                              f"(raw {raw_acc:.4f}, filtered {filtered_acc:.4f})")


def signature(outcome):
    assert all(r.ok for r in outcome.results)
    return [(r.scene_id, r.row, r.col, r.label.tobytes(), r.filtered.tobytes())
            for r in outcome.results]


def test_engine_modes_byte_identical_with_fault_tolerance():
    with criterion("engine-equivalence", 300.0):
        scenes = generate_corpus(31, 16, 0.3, size=256)
        tiles = []
        for s in scenes:
            split, _ = split_scene(s.raster, 128)
            tiles.extend(split)
        assert len(tiles) == 64

        want = signature(run_sequential(JobSpec(tiles=tiles)))
        for w in (1, 2, 4, 8):
            got = signature(run_local(JobSpec(
                tiles=tiles, mode="local", workers=w, chunk_size=4)))
            assert got == want, f"local pool with {w} workers diverged"
        for w in (1, 2, 4):
            got = signature(run_with_loopback_workers(JobSpec(
                tiles=tiles, mode="master", workers=w, chunk_size=4)))
            assert got == want, f"master with {w} workers diverged"

        # fault injection: kill one of two workers mid-job
        job = JobSpec(tiles=tiles, mode="master", chunk_size=2,
                      worker_timeout_s=60.0, tile_delay_s=0.02)
        bound, box = queue.Queue(), {}

        def serve():
            try:
                box["out"] = run_master(
                    job, bound_callback=lambda h, p: bound.put(f"{h}:{p}"))
            except BaseException as exc:
                box["err"] = exc
                bound.put(None)

        master = threading.Thread(target=serve, daemon=True)
        master.start()
        addr = bound.get(timeout=10.0)
        assert addr, f"master failed to start: {box.get('err')}"

        ctx = multiprocessing.get_context("fork")
        victim = ctx.Process(target=run_worker, args=(addr,),
                             kwargs={"heartbeat_s": 0.2}, daemon=True)
        survivor = ctx.Process(target=run_worker, args=(addr,),
                               kwargs={"heartbeat_s": 0.2}, daemon=True)
        victim.start()
        survivor.start()
        time.sleep(0.4)
        victim.kill()
        victim.join(timeout=5.0)

        master.join(timeout=180.0)
        assert not master.is_alive() and "err" not in box, \
            f"master did not finish cleanly: {box.get('err')}"
        survivor.join(timeout=30.0)

        outcome = box["out"]
        seen = [(r.scene_id, r.row, r.col) for r in outcome.results]
        assert len(seen) == len(set(seen)) == 64, "a tile was lost or duplicated"
        assert outcome.stats["requeued"] >= 1, "the kill landed after the job finished"
        assert signature(outcome) == want


def test_parallel_speedup_on_multicore():
    cores = os.cpu_count() or 1
    if cores < 4:
        print(f"ACCEPTANCE parallel-speedup: SKIP (the 2.5x map-phase target "
              f"is defined on a machine with >= 4 cores; this one has {cores})")
        pytest.skip(f"needs >= 4 CPU cores, found {cores}")
    with criterion("parallel-speedup", 300.0):
        scenes = generate_corpus(8, 64, 0.0, size=512)
        tiles = []
        for s in scenes:
            split, _ = split_scene(s.raster, 128)
            tiles.extend(split)
        assert len(tiles) == 1024

        jobs = [JobSpec(tiles=tiles)]
        jobs += [JobSpec(tiles=tiles, mode="local", workers=w, chunk_size=16)
                 for w in (1, 2, 4)]
        rows = bench(jobs)
        assert bench_csv(rows).splitlines()[0] == ",".join(BENCH_COLUMNS)

        base = rows[0]["map_s"]
        map_s = {row["workers"]: row["map_s"] for row in rows[1:]}
        assert map_s[1] >= map_s[2] >= map_s[4], \
            f"map time not monotone nonincreasing: {map_s}"
        speedup = base / map_s[4]
        assert speedup >= 2.5, f"map speedup at 4 workers {speedup:.2f}x < 2.5x"


def test_metrics_identities():
    with criterion("metrics-identities", 10.0):
        diagonal = ConfusionMatrix(np.diag([5, 7, 11]))
        assert report(diagonal).accuracy == 1.0
        rng = np.random.default_rng(3)
        percent = ConfusionMatrix(rng.integers(1, 10_000, (3, 3))).percent()
        assert np.allclose(percent.sum(axis=0), 100.0, atol=0.01)
        x = SceneRaster(rng.integers(0, 256, (48, 48, 3), dtype=np.uint8))
        assert abs(ssim(x, x) - 1.0) <= 1e-9
        a = SceneRaster(np.full((32, 32, 3), 128, np.uint8))
        b = SceneRaster(np.full((32, 32, 3), 130, np.uint8))
        closed_form = (2 * 128 * 130 + SSIM_C1) / (128**2 + 130**2 + SSIM_C1)
        assert abs(ssim(a, b) - closed_form) <= 1e-9


def test_tiling_round_trip():
    with criterion("tiling-round-trip", 10.0):
        rng = np.random.default_rng(12)
        big = SceneRaster(rng.integers(0, 256, (2048, 2048, 3), dtype=np.uint8),
                          "big")
        tiles, grid = split_scene(big, 256)
        assert len(tiles) == 64 and (grid.rows, grid.cols) == (8, 8)
        assert np.array_equal(stitch_scene(tiles, grid).data, big.data)

        ragged = SceneRaster(rng.integers(0, 256, (700, 1000, 3), dtype=np.uint8),
                             "ragged")
        tiles, grid = split_scene(ragged, 256)
        assert (grid.rows, grid.cols) == (3, 4)
        assert all(t.raster.data.shape == (256, 256, 3) for t in tiles)
        assert np.array_equal(stitch_scene(tiles, grid).data, ragged.data)
