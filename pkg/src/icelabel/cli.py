"""Command-line front end: every pipeline stage plus the engine modes.

Exit codes: 0 success, 1 operational failure (bad input, partial tile
failure), 2 usage error. Every operational error names the path or tile
it came from.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from .cloudfilter import FilterConfig, apply_filter
from .engine import (JobSpec, bench, bench_csv, run_job, run_master, run_worker)
from .metrics import confusion, report
from .raster import LabelMask, SceneRaster, Tile
from .segmentation import (PRESETS, SegmentationScheme, get_preset, parse_labels,
                           render_labels, segment)
from .synth import generate_corpus
from .tiling import (RunManifest, TileGrid, TileStatus, make_run_dirs,
                     read_image, read_manifest, split_scene, stitch_scene,
                     write_image, write_manifest)


def _expand_inputs(paths: list) -> list:
    """Files stay; directories contribute their PNGs sorted by name."""
    found = []
    for path in paths:
        if os.path.isdir(path):
            names = sorted(n for n in os.listdir(path) if n.lower().endswith(".png"))
            found.extend(os.path.join(path, n) for n in names)
        elif os.path.isfile(path):
            found.append(path)
        else:
            raise ValueError(f"input path does not exist: {path}")
    if not found:
        raise ValueError("no input PNG files under: " + ", ".join(paths))
    return found


def _load_scheme(text: str) -> SegmentationScheme:
    if text in PRESETS:
        return get_preset(text)
    if os.path.isfile(text):
        with open(text, "r", encoding="utf-8") as fh:
            return SegmentationScheme.from_dict(json.load(fh))
    raise ValueError(f"--scheme {text!r} is neither a preset "
                     f"({', '.join(sorted(PRESETS))}) nor a readable file")


def _load_filter_config(path: str) -> tuple:
    """Accepts either a run manifest or a bare filter-config JSON object.
    Returns (FilterConfig, SegmentationScheme | None)."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    if "filter" in data:
        manifest = RunManifest.from_dict(data)
        return manifest.filter_config, manifest.scheme
    return FilterConfig.from_dict(data), None


def _resolve_configs(args) -> tuple:
    config, config_scheme = (FilterConfig(), None)
    if getattr(args, "config", None):
        config, config_scheme = _load_filter_config(args.config)
    if getattr(args, "scheme", None):
        scheme = _load_scheme(args.scheme)
    else:
        scheme = config_scheme or get_preset("ross-sea-summer")
    return config, scheme


def _load_scenes(inputs: list) -> list:
    scenes, seen = [], {}
    for path in inputs:
        raster = read_image(path, promote_gray=True)
        if raster.scene_id in seen:
            raise ValueError(f"duplicate scene id {raster.scene_id!r} from "
                             f"{path} and {seen[raster.scene_id]}")
        seen[raster.scene_id] = path
        scenes.append((path, raster))
    return scenes


# --------------------------------------------------------------------------
# single-stage subcommands


def cmd_split(args) -> int:
    scenes = _load_scenes(_expand_inputs(args.inputs))
    os.makedirs(args.out, exist_ok=True)
    total = 0
    for path, raster in scenes:
        tiles, grid = split_scene(raster, args.tile_size)
        for t in tiles:
            name = f"{t.scene_id}_r{t.grid_row:03d}_c{t.grid_col:03d}.png"
            write_image(os.path.join(args.out, name), t.raster)
        with open(os.path.join(args.out, f"{raster.scene_id}_grid.json"),
                  "w", encoding="utf-8") as fh:
            json.dump(grid.to_dict(), fh, indent=2)
            fh.write("\n")
        total += len(tiles)
        print(f"{raster.scene_id}: {grid.rows}x{grid.cols} tiles")
    print(f"wrote {total} tiles to {args.out}")
    return 0


def cmd_filter(args) -> int:
    config, _ = _resolve_configs(args)
    scenes = _load_scenes(_expand_inputs(args.inputs))
    os.makedirs(args.out, exist_ok=True)
    failures = []
    for path, raster in scenes:
        try:
            out = apply_filter(raster, config)
        except Exception as exc:
            failures.append(f"{path}: {exc}")
            continue
        write_image(os.path.join(args.out, f"{raster.scene_id}.png"), out.filtered)
        print(f"{raster.scene_id}: affected fraction {out.affected_fraction:.4f}")
    for line in failures:
        print(f"error: {line}", file=sys.stderr)
    return 1 if failures else 0


def cmd_label(args) -> int:
    _, scheme = _resolve_configs(args)
    scenes = _load_scenes(_expand_inputs(args.inputs))
    os.makedirs(args.out, exist_ok=True)
    failures = []
    for path, raster in scenes:
        try:
            mask = segment(raster, scheme)
        except Exception as exc:
            failures.append(f"{path}: {exc}")
            continue
        write_image(os.path.join(args.out, f"{raster.scene_id}.png"),
                    render_labels(mask))
    for line in failures:
        print(f"error: {line}", file=sys.stderr)
    return 1 if failures else 0


def cmd_synth(args) -> int:
    scenes = generate_corpus(args.seed, args.count, args.haze_fraction, args.size)
    scene_dir = os.path.join(args.out, "scenes")
    truth_dir = os.path.join(args.out, "truth")
    os.makedirs(scene_dir, exist_ok=True)
    os.makedirs(truth_dir, exist_ok=True)
    for s in scenes:
        write_image(os.path.join(scene_dir, f"{s.scene_id}.png"), s.raster)
        write_image(os.path.join(truth_dir, f"{s.scene_id}.png"),
                    render_labels(s.labels))
    with open(os.path.join(args.out, "corpus.json"), "w", encoding="utf-8") as fh:
        json.dump({"seed": args.seed, "count": args.count,
                   "haze_fraction": args.haze_fraction, "size": args.size,
                   "hazy_scenes": sum(s.hazy for s in scenes)}, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(scenes)} scenes ({sum(s.hazy for s in scenes)} hazy) "
          f"to {args.out}")
    return 0


# --------------------------------------------------------------------------
# pipeline and the distributed entry points


def _write_run_outputs(outcome, grids: dict, dirs: dict) -> tuple:
    """Stitch per-scene outputs for fully successful scenes. Returns
    (tile statuses, failure messages)."""
    by_scene: dict = {}
    for res in outcome.results:
        by_scene.setdefault(res.scene_id, []).append(res)

    statuses, failures = [], []
    for res in outcome.results:
        status = TileStatus(res.scene_id, res.row, res.col,
                            status="ok" if res.ok else "failed",
                            error=res.error)
        if not res.ok:
            failures.append(f"tile {res.scene_id} ({res.row},{res.col}): {res.error}")
        statuses.append(status)

    for scene_id, results in by_scene.items():
        if any(not r.ok for r in results):
            continue
        grid = grids[scene_id]
        filtered_tiles = [Tile(SceneRaster(r.filtered, scene_id), scene_id,
                               r.row, r.col) for r in results]
        label_tiles = [Tile(render_labels(LabelMask(r.label)), scene_id,
                            r.row, r.col) for r in results]
        filtered_path = os.path.join(dirs["filtered"], f"{scene_id}.png")
        labels_path = os.path.join(dirs["labels"], f"{scene_id}.png")
        write_image(filtered_path, stitch_scene(filtered_tiles, grid))
        write_image(labels_path, stitch_scene(label_tiles, grid))
        for status in statuses:
            if status.scene_id == scene_id:
                status.outputs = {"filtered": os.path.join("filtered", f"{scene_id}.png"),
                                  "labels": os.path.join("labels", f"{scene_id}.png")}
    return statuses, failures


def _evaluate_labels(scene_ids: list, labels_dir: str, truth_dir: str):
    total = None
    for scene_id in scene_ids:
        pred_path = os.path.join(labels_dir, f"{scene_id}.png")
        truth_path = os.path.join(truth_dir, f"{scene_id}.png")
        for p in (pred_path, truth_path):
            if not os.path.isfile(p):
                raise ValueError(f"missing label image: {p}")
        pred = parse_labels(read_image(pred_path))
        truth = parse_labels(read_image(truth_path))
        cm = confusion(pred, truth)
        total = cm if total is None else total + cm
    if total is None:
        raise ValueError(f"no scenes to evaluate against {truth_dir}")
    return total, report(total)


def _format_report(cm, rep, fmt: str) -> str:
    if fmt == "csv":
        return rep.to_csv()
    lines = [f"pixels    {rep.pixels}",
             f"accuracy  {rep.accuracy:.6f}",
             f"macro f1  {rep.macro_f1:.6f}",
             "class        precision  recall     f1"]
    for cls, p, r, f in zip(("THICK_ICE", "THIN_ICE", "OPEN_WATER"),
                            rep.precision, rep.recall, rep.f1):
        lines.append(f"{cls:<12} {p:<10.6f} {r:<10.6f} {f:.6f}")
    lines.append("")
    lines.append(cm.format_percent())
    return "\n".join(lines) + "\n"


def _run_pipeline(args, runner) -> int:
    config, scheme = _resolve_configs(args)
    inputs = _expand_inputs(args.inputs)
    scenes = _load_scenes(inputs)

    run_id = args.run_id or time.strftime("run-%Y%m%d-%H%M%S")
    dirs = make_run_dirs(args.out, run_id)

    all_tiles, grids, manifest_inputs = [], {}, []
    for path, raster in scenes:
        tiles, grid = split_scene(raster, args.tile_size)
        for t in tiles:
            name = f"{t.scene_id}_r{t.grid_row:03d}_c{t.grid_col:03d}.png"
            write_image(os.path.join(dirs["tiles"], name), t.raster)
        all_tiles.extend(tiles)
        grids[raster.scene_id] = grid
        manifest_inputs.append({"path": os.path.abspath(path), **grid.to_dict()})

    job = JobSpec(tiles=all_tiles, filter_config=config, scheme=scheme,
                  mode=args.mode, workers=args.workers, chunk_size=args.chunk_size)
    outcome = runner(job)

    statuses, failures = _write_run_outputs(outcome, grids, dirs)

    manifest = RunManifest(
        run_id=run_id, filter_config=config, scheme=scheme,
        inputs=manifest_inputs,
        engine={"mode": args.mode, "workers": args.workers,
                "chunk_size": args.chunk_size},
        outputs={"tiles": "tiles", "filtered": "filtered", "labels": "labels",
                 "reports": "reports"},
        tiles=statuses, timing=outcome.timing)
    write_manifest(manifest, os.path.join(dirs["root"], "manifest.json"))

    if args.truth and not failures:
        cm, rep = _evaluate_labels(list(grids), dirs["labels"], args.truth)
        for fmt, name in (("csv", "metrics.csv"), ("text", "metrics.txt")):
            with open(os.path.join(dirs["reports"], name), "w",
                      encoding="utf-8") as fh:
                fh.write(_format_report(cm, rep, fmt))
        print(f"accuracy vs truth: {rep.accuracy:.6f}")

    t = outcome.timing
    print(f"run {run_id}: {t.tiles_processed}/{len(all_tiles)} tiles over "
          f"{len(scenes)} scenes (mode {args.mode}, {args.workers} workers, "
          f"load {t.load_s:.2f}s map {t.map_s:.2f}s reduce {t.reduce_s:.2f}s)")
    if failures:
        print(f"error: {len(failures)} tiles failed", file=sys.stderr)
        for line in failures:
            print(f"error: {line}", file=sys.stderr)
        return 1
    return 0


def cmd_pipeline(args) -> int:
    return _run_pipeline(args, run_job)


def cmd_master(args) -> int:
    def announce(host, port):
        print(f"listening on {host}:{port}", flush=True)

    def runner(job):
        job = JobSpec(tiles=job.tiles, filter_config=job.filter_config,
                      scheme=job.scheme, mode="master", workers=args.workers,
                      chunk_size=args.chunk_size, bind=args.bind,
                      worker_timeout_s=args.worker_timeout)
        return run_master(job, bound_callback=announce)

    return _run_pipeline(args, runner)


def cmd_worker(args) -> int:
    code = run_worker(args.master, cores=args.workers)
    if code != 0:
        print(f"error: lost master at {args.master}", file=sys.stderr)
    return code


def cmd_evaluate(args) -> int:
    if bool(args.config) == bool(args.pred):
        raise ValueError("give exactly one of --config <manifest> or --pred <dir>")
    if args.config:
        manifest = read_manifest(args.config)
        root = os.path.dirname(os.path.abspath(args.config))
        labels_dir = os.path.join(root, manifest.outputs.get("labels", "labels"))
        scene_ids = [rec["scene_id"] for rec in manifest.inputs]
    else:
        labels_dir = args.pred
        scene_ids = [os.path.splitext(n)[0] for n in sorted(os.listdir(args.pred))
                     if n.lower().endswith(".png")]
    cm, rep = _evaluate_labels(scene_ids, labels_dir, args.truth)
    text = _format_report(cm, rep, args.format)
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def cmd_bench(args) -> int:
    workers = [int(w) for w in args.workers.split(",") if w]
    if not workers:
        raise ValueError("--workers must list at least one count")
    scenes = generate_corpus(args.seed, args.tile_count, 0.0, args.tile_size)
    tiles = [Tile(s.raster, s.raster.scene_id, i, 0) for i, s in enumerate(scenes)]
    jobs = [JobSpec(tiles=tiles, mode="sequential")]
    jobs += [JobSpec(tiles=tiles, mode=args.mode, workers=w,
                     chunk_size=args.chunk_size) for w in workers]
    rows = bench(jobs)
    if args.format == "csv":
        text = bench_csv(rows)
    else:
        header = "  ".join(f"{c:>13}" for c in rows[0])
        body = ["  ".join(f"{row[c]:>13}" for c in row) for row in rows]
        text = "\n".join([header] + body) + "\n"
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(bench_csv(rows) if args.out.endswith(".csv") else text)
    return 0


# --------------------------------------------------------------------------
# parser


def _add_scheme_config(p) -> None:
    p.add_argument("--config", help="run manifest or filter-config JSON")
    p.add_argument("--scheme", help="scheme preset name or JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icelabel",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("split", help="cut scenes into fixed-size tiles")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--tile-size", type=int, default=256)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("filter", help="remove thin cloud and shadow")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    _add_scheme_config(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("label", help="segment scenes into class colors")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    _add_scheme_config(p)
    p.set_defaults(func=cmd_label)

    for name, fn in (("pipeline", cmd_pipeline), ("master", cmd_master)):
        p = sub.add_parser(name, help="split, filter, and label end to end"
                           + (" with remote workers" if name == "master" else ""))
        p.add_argument("inputs", nargs="+")
        p.add_argument("--out", required=True)
        _add_scheme_config(p)
        p.add_argument("--run-id", default="")
        p.add_argument("--tile-size", type=int, default=256)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--chunk-size", type=int, default=8)
        p.add_argument("--truth", help="ground-truth label dir; adds reports")
        if name == "pipeline":
            p.add_argument("--mode", choices=["sequential", "local", "master"],
                           default="sequential")
        else:
            p.add_argument("--bind", default="127.0.0.1:0")
            p.add_argument("--worker-timeout", type=float, default=60.0)
            p.set_defaults(mode="master")
        p.set_defaults(func=fn)

    p = sub.add_parser("worker", help="serve a master until shutdown")
    p.add_argument("--master", required=True, help="master host:port")
    p.add_argument("--workers", type=int, default=1, help="local pool size")
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("evaluate", help="score labels against ground truth")
    p.add_argument("--config", help="run manifest to locate predictions")
    p.add_argument("--pred", help="directory of predicted label images")
    p.add_argument("--truth", required=True)
    p.add_argument("--format", choices=["csv", "text"], default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="phase-timing table across worker counts")
    p.add_argument("--mode", choices=["local", "master"], default="local")
    p.add_argument("--workers", default="1,2,4")
    p.add_argument("--tile-count", type=int, default=16)
    p.add_argument("--tile-size", type=int, default=128)
    p.add_argument("--chunk-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["csv", "text"], default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--haze-fraction", type=float, default=0.3)
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
