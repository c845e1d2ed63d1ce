"""Command-line front end: seeded batch runs, cache ablation, replay checks."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import yaml

from semnav.cache import CacheConfig, NoveltyCache
from semnav.core import CostTable, ValidationError, cost_table_from_obj, embedding_from_b64
from semnav.sim import PipelineConfig, Scene, TASK_NAMES, compute_metrics, generate_scene, run_episode


def _load_pipeline_config(path: str | None) -> PipelineConfig:
    if not path:
        return PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        return PipelineConfig.from_obj(yaml.safe_load(fh))


def _scene_for(ref: str, seed: int) -> Scene:
    """A scene file path, or a named generator task seeded per trial."""
    if ref in TASK_NAMES:
        return generate_scene(ref, seed)
    return Scene.load(ref)


def _cmd_run(args) -> int:
    config = _load_pipeline_config(args.config)
    if args.trials < 1:
        raise ValidationError("--trials must be >= 1")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    batch = []
    rows = []
    for trial in range(args.trials):
        seed = args.seed + trial
        scene = _scene_for(args.scene, seed)
        result = run_episode(scene, config, seed=seed)
        batch.append(result.metrics)
        rows.append({"seed": seed, **result.metrics.to_obj()})
        if args.out:
            path = os.path.join(args.out, f"replay_{seed}.jsonl")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(result.replay_text)
    if args.out:
        with open(os.path.join(args.out, "metrics.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    aggregate = {"scene": args.scene, "seed": args.seed, **compute_metrics(batch)}
    json.dump(aggregate, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def _cmd_ablate_cache(args) -> int:
    cache = NoveltyCache(CacheConfig(k=args.k, gamma=args.gamma))
    if args.store:
        # re-key the persisted entries under the CLI's gamma/k, preserving
        # insertion order so FIFO eviction semantics carry over
        loaded = json.loads(NoveltyCache.load(args.store).snapshot_text())
        for item in loaded["entries"]:
            cache.insert_entry(
                embedding_from_b64(item["embedding_b64"]),
                cost_table_from_obj(item["table"]),
            )
        cache.reset_stats()
    with open(args.stream, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            emb = embedding_from_b64(rec["embedding_b64"])
            decision = cache.check_novelty(emb)
            if not decision.is_hit:
                cache.insert_entry(emb, CostTable(()))
    if args.save_store:
        cache.save(args.save_store)
    stats = cache.cache_stats()
    frames = stats["frames"]
    report = {
        "gamma": args.gamma,
        "k": args.k,
        "frames": frames,
        "scene_queries": stats["scene_queries"],
        "cache_hits": stats["cache_hits"],
        "hit_rate": stats["cache_hits"] / frames if frames else 0.0,
        "entries": len(cache),
    }
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def _save_ppm(path: str, pixels) -> None:
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def _cmd_replay(args) -> int:
    with open(args.log, encoding="utf-8") as fh:
        text = fh.read()
    first = text.splitlines()[0] if text.strip() else "{}"
    header = json.loads(first)
    if header.get("type") != "header":
        raise ValidationError("replay log must start with a header record")
    scene = Scene.from_obj(header["scene"])
    config = PipelineConfig.from_obj(header["config"])
    seed = int(header["seed"])

    observer = None
    if args.render_overlays or args.render_grids:
        out_dir = args.out or os.path.dirname(os.path.abspath(args.log))
        os.makedirs(out_dir, exist_ok=True)

        def observer(tick, grid, overlay):
            if args.render_grids:
                grid.save_pgm(os.path.join(out_dir, f"grid_{tick:05d}"))
            if args.render_overlays and overlay is not None:
                _save_ppm(os.path.join(out_dir, f"overlay_{tick:05d}.ppm"), overlay.pixels)

    result = run_episode(scene, config, seed=seed, observer=observer)
    if result.replay_text == text:
        print(f"OK: bit-identical replay ({len(text.splitlines())} records)")
        return 0
    got = result.replay_text.splitlines()
    want = text.splitlines()
    for i, (fresh, logged) in enumerate(zip(got, want)):
        if fresh != logged:
            print(f"FAIL: first mismatch at record {i}")
            return 1
    print(f"FAIL: record count differs (log {len(want)}, rerun {len(got)})")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semnav",
        description="Cost-aware semantic navigation: batch trials, cache ablation, replay.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run seeded closed-loop trials and aggregate metrics")
    run_p.add_argument(
        "--scene", required=True,
        help="scene file (YAML) or one of: " + ", ".join(TASK_NAMES),
    )
    run_p.add_argument("--config", default=None, help="pipeline config file (YAML)")
    run_p.add_argument("--seed", type=int, default=0, help="base seed; trial i uses seed+i")
    run_p.add_argument("--trials", type=int, default=1)
    run_p.add_argument("--out", default=None, help="directory for metrics.csv and replay logs")
    run_p.set_defaults(func=_cmd_run)

    ab_p = sub.add_parser("ablate-cache", help="replay an embedding stream through the novelty cache")
    ab_p.add_argument("--gamma", type=float, required=True, help="novelty threshold in [0, 2]")
    ab_p.add_argument("--k", type=int, required=True, help="neighbors aggregated on a hit")
    ab_p.add_argument(
        "--stream", required=True,
        help='JSONL stream; each line {"frame_id": ..., "embedding_b64": ...}',
    )
    ab_p.add_argument("--store", default=None, help="cache snapshot to preload")
    ab_p.add_argument("--save-store", default=None, help="write the final cache snapshot here")
    ab_p.set_defaults(func=_cmd_ablate_cache)

    rp_p = sub.add_parser("replay", help="re-run a replay log and verify bit-identity")
    rp_p.add_argument("--log", required=True, help="replay JSONL written by `run`")
    rp_p.add_argument("--render-overlays", action="store_true", help="write overlay PPMs per planning tick")
    rp_p.add_argument("--render-grids", action="store_true", help="write occupancy PGMs per tick")
    rp_p.add_argument("--out", default=None, help="raster output directory (default: next to the log)")
    rp_p.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
