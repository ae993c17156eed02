"""Command line entry point: run, gen, metrics and render."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .generator import GenConfig, GenerationError, build_suite, generate_scene
from .harness import (
    ABLATIONS,
    PROFILES,
    ConfigurationError,
    EpisodeConfig,
    NoiseConfig,
    collect_results,
    load_manifest,
    load_result,
    metrics_json,
    run_episode,
)
from .mapping import load_grids, save_grids
from .render import export_map_render


def _write_result(res, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    stem = res.episode_id or "episode"
    path = out / f"{stem}.result.json"
    res.save(path)
    if res.grids is not None:
        save_grids(res.grids, out / f"{stem}.maps.npz")
    return path


def cmd_run(args) -> int:
    noise = NoiseConfig()
    if args.noise:
        try:
            noise = NoiseConfig.from_dict(json.loads(Path(args.noise).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"noise: {exc}") from None
    out = Path(args.out)
    if args.manifest:
        configs = load_manifest(args.manifest)
        overrides = {"noise": noise} if args.noise else {}
        if args.ablate:
            overrides["ablate"] = args.ablate
        if args.profile:
            overrides["profile"] = args.profile
        if args.max_steps:
            overrides["max_steps"] = args.max_steps
        results = []
        for k, cfg in enumerate(configs):
            cfg = replace(cfg, episode_id=cfg.episode_id or f"ep{k:03d}", **overrides)
            res = run_episode(cfg)
            _write_result(res, out)
            results.append(res)
            print(f"{cfg.episode_id} {res.verdict} steps={res.steps} path={res.path_length:.2f}", flush=True)
        text = metrics_json(results)
        (out / "metrics.json").write_text(text)
        sys.stdout.write(text)
        return 0
    if not args.scene or (args.goal is None) == (args.caption is None):
        raise ConfigurationError("run needs --scene and exactly one of --goal/--caption (or --manifest)")
    cfg = EpisodeConfig(
        scene=args.scene, goal=args.goal, caption=args.caption, profile=args.profile or "coin",
        max_steps=args.max_steps, seed=args.seed, noise=noise, ablate=args.ablate,
        target_id=args.target_id, episode_id=args.episode_id,
    )
    res = run_episode(cfg)
    path = _write_result(res, out)
    print(json.dumps({"result": str(path), "verdict": res.verdict, "success": res.success,
                      "steps": res.steps, "path_length": round(res.path_length, 6)}, sort_keys=True))
    return 0


def cmd_gen(args) -> int:
    if args.count > 1:
        path = build_suite(args.out, args.count, args.seed, (args.rooms, args.rooms),
                           (args.distractors, args.distractors), args.kind)
        print(str(path))
        return 0
    ep = generate_scene(args.seed, GenConfig(rooms=args.rooms, distractors=args.distractors,
                                             distractor_kind=args.kind))
    sp, gp = ep.write(args.out, args.stem or f"seed{args.seed}")
    print(json.dumps({"scene": str(sp), "goal": str(gp), "target_id": ep.info["target_id"],
                      "caption": ep.info["caption"]}, sort_keys=True))
    return 0


def cmd_metrics(args) -> int:
    results = collect_results(args.in_dir)
    if not results:
        raise ConfigurationError(f"no *.result.json files in {args.in_dir}")
    sys.stdout.write(metrics_json(results))
    return 0


def cmd_render(args) -> int:
    rpath = Path(args.result)
    res = load_result(rpath)
    stem = rpath.name[: -len(".result.json")] if rpath.name.endswith(".result.json") else rpath.stem
    maps = rpath.with_name(f"{stem}.maps.npz")
    if not maps.exists():
        raise ConfigurationError(f"map snapshot {maps} not found")
    paths = export_map_render(load_grids(maps), res.trajectory, args.out, res.verdict, stem)
    for p in paths:
        print(str(p))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contextnav", description="Text-goal instance navigation in synthetic scenes.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one episode (or a manifest of episodes)")
    r.add_argument("--scene")
    r.add_argument("--goal")
    r.add_argument("--caption")
    r.add_argument("--manifest", help="JSON list of episode configs")
    r.add_argument("--profile", choices=sorted(PROFILES))
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--max-steps", type=int)
    r.add_argument("--out", required=True)
    r.add_argument("--noise", help="JSON file with oracle noise settings")
    r.add_argument("--ablate", choices=ABLATIONS)
    r.add_argument("--target-id", help="ground-truth goal instance (resolved from the scene when omitted)")
    r.add_argument("--episode-id", default="episode")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen", help="generate a scene and goal")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--rooms", type=int, default=2)
    g.add_argument("--distractors", type=int, default=1)
    g.add_argument("--kind", choices=("context", "attribute"), default="context")
    g.add_argument("--count", type=int, default=1, help="write this many episodes plus a manifest")
    g.add_argument("--stem")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("metrics", help="SR/SPL over a directory of results")
    m.add_argument("--in", dest="in_dir", required=True)
    m.set_defaults(func=cmd_metrics)

    v = sub.add_parser("render", help="export map layers and an SVG overlay for a result")
    v.add_argument("--result", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, GenerationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
