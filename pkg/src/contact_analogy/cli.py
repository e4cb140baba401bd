"""Command-line interface.

Exit codes: 0 success; 1 no geometric match (and, for bench, scene load
failures); 2 a match was found but nothing verified; 3 I/O or format errors.
Errors are emitted as one JSON object on stderr.  The CONTACT_ANALOGY_LOG
environment variable (error, info, debug) controls log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .errors import (ContactAnalogyError, DimensionError, FormatError,
                     NoCandidates, NoForeground, NoVerifiedCandidate, SceneError)
from .matching import select_tool
from .scene import load_scene
from .suite import generate_suite, run_bench, run_scene

log = logging.getLogger("contact_analogy")


def _configure_logging() -> None:
    level = os.environ.get("CONTACT_ANALOGY_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _add_match_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", required=True, help="scene JSON file")
    p.add_argument("--out", default=".", help="output directory for reports and figures")
    p.add_argument("--viz", action="store_true", help="write overlay and heatmap images")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="weight of the curvature-ratio penalty")
    p.add_argument("--patch", type=int, default=None, help="patch side m")
    p.add_argument("--topk", type=int, default=None, help="global top-k proposals")
    p.add_argument("--alpha", type=float, default=None, help="scale-selection constant")
    p.add_argument("--delta", type=float, default=None, help="ray-cast seed offset, px")
    p.add_argument("--pyramid", type=str, default=None,
                   help="comma-separated observation scales, px")
    p.add_argument("--fallback-features", action="store_true",
                   help="ignore feature files and use built-in descriptors")
    p.add_argument("--max-sim-candidates", type=int, default=None)
    p.add_argument("--no-fallback-select", action="store_true",
                   help="fail instead of returning an unverified candidate")
    p.add_argument("--dump-estimates", action="store_true",
                   help="include curvature debug records in the report")


def _apply_overrides(config, args):
    updates = {}
    if args.lam is not None:
        updates["lam"] = args.lam
    if args.patch is not None:
        updates["m"] = args.patch
    if args.topk is not None:
        updates["k"] = args.topk
    if args.alpha is not None:
        updates["alpha"] = args.alpha
    if args.delta is not None:
        updates["delta"] = args.delta
    if args.pyramid is not None:
        updates["pyramid"] = [float(s) for s in args.pyramid.split(",") if s.strip()]
    if args.max_sim_candidates is not None:
        updates["max_sim_candidates"] = args.max_sim_candidates
    if args.no_fallback_select:
        updates["fallback_select"] = False
    return replace(config, **updates) if updates else config


def _strip_features(scene) -> None:
    scene.demo.feature_stem = None
    for t in scene.targets:
        t.feature_stem = None


def _write_match_outputs(args, scene, report, score_sink, target_index: int) -> None:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = scene.path.parent.name if scene.path.name == "scene.json" else scene.path.stem
    report_path = out_dir / f"{stem}_report.json"
    report.save(report_path)
    print(f"report: {report_path}")
    sel = report.data["selected"]
    state = "verified" if sel["verified"] else "UNVERIFIED"
    print(f"selected rank {sel['rank']} ({state}) after {sel['runs']} run(s); "
          f"tool point ({sel['p_tool'][0]:.1f}, {sel['p_tool'][1]:.1f})")
    if args.viz:
        from . import viz
        from .geometry import Point2
        from .matching import MatchCandidate  # noqa: F401  (typing aid)
        cands = report.data["candidates"]
        points = [Point2(*c["p_tool"]) for c in cands]

        class _C:  # tiny adapter for the figure helper
            def __init__(self, d):
                self.p_tool = Point2(*d["p_tool"])
                self.p_object = Point2(*d["p_object"])
        figs = viz.save_match_figures(
            out_dir, stem, scene.demo.tool_mask, scene.demo.object_mask,
            scene.demo.p_tool, scene.demo.p_object,
            scene.targets[target_index].tool_mask, scene.object_mask,
            [_C(c) for c in cands], sel["rank"], score_sink)
        print(f"figures: {len(figs)} file(s) in {out_dir}")


def cmd_match(args) -> int:
    scene = load_scene(args.scene)
    if args.fallback_features:
        _strip_features(scene)
    config = _apply_overrides(scene.config, args)
    score_sink: dict | None = {} if args.viz else None
    report = run_scene(scene, config=config, score_sink=score_sink)
    if not args.dump_estimates:
        for c in report.data["candidates"]:
            c.pop("tool_estimate", None)
            c.pop("object_estimate", None)
    _write_match_outputs(args, scene, report, score_sink, 0)
    return 0


def cmd_select_tool(args) -> int:
    scene = load_scene(args.scene)
    if args.fallback_features:
        _strip_features(scene)
    config = _apply_overrides(scene.config, args)
    tools = [(t.tool_mask, t.feature_stem) for t in scene.targets]
    selection = select_tool(scene.demo, tools, scene.object_mask, config)
    score_sink: dict | None = {} if args.viz else None
    report = run_scene(scene, config=config, target_index=selection.index,
                       score_sink=score_sink)
    report.data["tool_index"] = selection.index
    if not args.dump_estimates:
        for c in report.data["candidates"]:
            c.pop("tool_estimate", None)
            c.pop("object_estimate", None)
    print(f"chosen tool index: {selection.index} "
          f"(combined {selection.candidate.combined:.4f})")
    _write_match_outputs(args, scene, report, score_sink, selection.index)
    return 0


def cmd_gen_suite(args) -> int:
    dirs = generate_suite(args.out, args.seed, args.count)
    print(f"generated {len(dirs)} scene(s) under {args.out}")
    return 0


def cmd_bench(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "bench.csv"
    try:
        summary = run_bench(args.suite, csv_path, threads=args.threads)
    except SceneError as exc:
        _emit_error("SceneError", str(exc))
        return 1
    print(f"scenes:                  {summary.scenes}")
    print(f"success rate:            {summary.success_rate * 100:.1f}%")
    print(f"mean runs per success:   {summary.mean_runs_per_success:.2f}")
    print(f"mean wall-clock [s]:     {summary.mean_time_s:.2f}")
    print(f"csv: {csv_path}")
    if args.viz:
        from . import viz
        fig = viz.save_bench_figure(out_dir / "bench.png", summary.rows)
        print(f"figure: {fig}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contact-analogy",
        description="Contact-point transfer by global feature matching and "
                    "local curvature refinement, with trajectory retargeting "
                    "and geometric verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_match = sub.add_parser("match", help="match one target pair and verify")
    _add_match_flags(p_match)
    p_match.set_defaults(func=cmd_match)

    p_select = sub.add_parser("select-tool", help="pick the best tool from a set")
    _add_match_flags(p_select)
    p_select.set_defaults(func=cmd_select_tool)

    p_gen = sub.add_parser("gen-suite", help="generate the synthetic task suite")
    p_gen.add_argument("--out", required=True, help="suite output directory")
    p_gen.add_argument("--seed", type=int, default=1)
    p_gen.add_argument("--count", type=int, default=20)
    p_gen.set_defaults(func=cmd_gen_suite)

    p_bench = sub.add_parser("bench", help="run every scene in a suite")
    p_bench.add_argument("--suite", required=True, help="suite directory")
    p_bench.add_argument("--out", default=".", help="output directory for CSV/figures")
    p_bench.add_argument("--threads", type=int, default=1)
    p_bench.add_argument("--viz", action="store_true")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoVerifiedCandidate as exc:
        _emit_error("NoVerifiedCandidate", str(exc))
        return 2
    except (NoCandidates, NoForeground) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    except (SceneError, FormatError, DimensionError, OSError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 3
    except ContactAnalogyError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 3


if __name__ == "__main__":
    sys.exit(main())
