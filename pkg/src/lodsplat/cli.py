"""Command-line front end: generate, partition, traverse, render, simulate.

Every subcommand reads and writes plain artifacts (scene JSON, SLT1 binaries,
PPM images, JSON/CSV reports) under --out, so runs are reproducible from their
inputs alone; the only run-varying output field is the meta.created_utc
timestamp inside JSON reports.  Verbosity comes from the SLT_LOG environment
variable (debug, info, warning, error).  Exit codes: 0 on success, 2 for bad
arguments (argparse), 1 for any file or pipeline error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from datetime import datetime, timezone

from .errors import LodsplatError
from .scene import (
    gen_synthetic_tree,
    load_camera,
    load_scene,
    oracle_cut,
    orbit_from_bounds,
    save_camera,
    save_scene,
)
from .simarch import ArchConfig, SimReport, exhaustive_baseline, simulate_end_to_end
from .sltree import build_sltree, initial_partition, load_sltree, subtree_sizes, write_sltree
from .splat import image_metrics, render_image, write_image
from .traversal import compute_weights, traverse, traverse_static, workload_report

log = logging.getLogger("lodsplat")

__all__ = ["main"]


def _meta() -> dict:
    return {"created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds")}


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    log.info("wrote %s", path)
    print(f"wrote {path}")


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _parse_ints(text: str) -> list[int]:
    """Accept '4,8,32' or '1..8' (inclusive range)."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in text.split(",") if tok]


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _load_slt(args):
    """Subtree source for traversal-like commands: --slt file or scene + tau."""
    if getattr(args, "slt", None):
        return load_sltree(args.slt)
    if not args.scene:
        raise LodsplatError("either --slt or --scene is required")
    tree = load_scene(args.scene)
    return build_sltree(tree, args.tau)


def _resolve_camera(args, slt, outdir: str):
    if args.camera:
        return load_camera(args.camera)
    # deterministic default orbit framing the whole scene; kept as an artifact
    root_nid = slt._rec_nid[slt.root_sid][0]
    cam = orbit_from_bounds(slt._aabb_lo[root_nid], slt._aabb_hi[root_nid], 0.9, 0.35, 2.2)
    path = os.path.join(outdir, "camera.json")
    save_camera(cam, path)
    log.info("no --camera given; wrote default %s", path)
    return cam


def _arch_config(args, slt) -> ArchConfig:
    if args.arch:
        with open(args.arch, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise LodsplatError(f"{args.arch}: {exc}") from exc
        return ArchConfig.from_json(doc)
    # default config, adapted so any scene schedules: entries big enough for
    # this tau_s, queue big enough that enqueues never block (each sid is
    # enqueued exactly once, so subtree_count slots bound the occupancy)
    cfg = ArchConfig()
    overrides = {}
    if cfg.cache_entry_nodes < slt.tau_s:
        overrides["cache_entry_nodes"] = slt.tau_s
    safe_bytes = 4 * slt.subtree_count
    if safe_bytes > cfg.subtree_queue_bytes:
        overrides["subtree_queue_bytes"] = safe_bytes
    if overrides:
        log.info("adapting default arch config: %s", overrides)
        cfg = ArchConfig.from_json(overrides)
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    outdir = _outdir(args)
    tree = gen_synthetic_tree(args.seed, args.nodes, args.max_children, args.depth_limit, args.shrink)
    path = os.path.join(outdir, "scene.json")
    save_scene(tree, path)
    log.info("generated %d nodes (budget %d)", tree.node_count, args.nodes)
    print(f"wrote {path} ({tree.node_count} nodes)")
    return 0


def cmd_partition(args) -> int:
    outdir = _outdir(args)
    tree = load_scene(args.scene)
    provisional = [st.size for st in initial_partition(tree, args.tau)]
    slt = build_sltree(tree, args.tau)
    slt_path = os.path.join(outdir, "scene.slt")
    write_sltree(slt, slt_path)
    print(f"wrote {slt_path} ({slt.subtree_count} subtrees)")
    sizes = subtree_sizes(slt)
    _write_json(
        os.path.join(outdir, "partition.json"),
        {
            "tau_s": args.tau,
            "node_count": slt.node_count,
            "subtree_count": slt.subtree_count,
            "sizes": sizes,
            "pre_merge": {
                "count": len(provisional),
                "mean": statistics.fmean(provisional),
                "stddev": statistics.pstdev(provisional),
            },
            "post_merge": {
                "count": len(sizes),
                "mean": statistics.fmean(sizes),
                "stddev": statistics.pstdev(sizes),
            },
            "meta": _meta(),
        },
    )
    return 0


def cmd_traverse(args) -> int:
    outdir = _outdir(args)
    slt = _load_slt(args)
    cam = _resolve_camera(args, slt, outdir)
    cut, stats = traverse(slt, cam, args.epsilon, args.workers)
    doc = {
        "tau_s": slt.tau_s,
        "epsilon": args.epsilon,
        "workers": args.workers,
        "selected": cut.selected,
        "stats": workload_report(stats),
        "meta": _meta(),
    }
    if args.weights:
        weights = compute_weights(slt, cut.selected, cam, args.epsilon)
        doc["weights"] = {str(nid): weights[nid] for nid in cut.selected}
    _write_json(os.path.join(outdir, "cut.json"), doc)
    return 0


def cmd_render(args) -> int:
    outdir = _outdir(args)
    slt = _load_slt(args)
    cam = _resolve_camera(args, slt, outdir)
    cut, _ = traverse(slt, cam, args.epsilon, 1)
    weights = compute_weights(slt, cut.selected, cam, args.epsilon) if args.weights else None
    img, div = render_image(slt, cut.selected, cam, args.mode, weights)
    ppm = os.path.join(outdir, f"render-{args.mode}.ppm")
    write_image(img, ppm)
    print(f"wrote {ppm}")
    doc = {
        "mode": args.mode,
        "epsilon": args.epsilon,
        "cut_size": len(cut.selected),
        "divergence": div.to_json(),
        "meta": _meta(),
    }
    if args.mode == "grouped":
        ref_img, _ = render_image(slt, cut.selected, cam, "reference", weights)
        doc["metrics_vs_reference"] = image_metrics(img, ref_img)
    _write_json(os.path.join(outdir, "render.json"), doc)
    return 0


def cmd_simulate(args) -> int:
    outdir = _outdir(args)
    slt = _load_slt(args)
    cam = _resolve_camera(args, slt, outdir)
    cfg = _arch_config(args, slt)
    img, report = simulate_end_to_end(slt, cam, args.epsilon, cfg, args.mode)
    baseline = exhaustive_baseline(slt, cam, args.epsilon, cfg)
    reduction = 1.0 - report.dram_bytes_streaming / baseline.dram_bytes_streaming
    ppm = os.path.join(outdir, "sim-render.ppm")
    write_image(img, ppm)
    print(f"wrote {ppm}")
    _write_json(
        os.path.join(outdir, "sim.json"),
        {
            "config": cfg.to_json(),
            "epsilon": args.epsilon,
            "mode": args.mode,
            "report": report.to_json(),
            "baseline": {
                "lod_cycles": baseline.lod_cycles,
                "dram_bytes_streaming": baseline.dram_bytes_streaming,
            },
            "traffic_reduction_pct": 100.0 * reduction,
            "meta": _meta(),
        },
    )
    csv_path = os.path.join(outdir, "sim.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SimReport.CSV_FIELDS)
        writer.writerow(report.csv_row())
    print(f"wrote {csv_path}")
    return 0


def cmd_compare(args) -> int:
    outdir = _outdir(args)
    tree = load_scene(args.scene)
    slt = build_sltree(tree, args.tau)
    cam = _resolve_camera(args, slt, outdir)
    cut, _ = traverse(slt, cam, args.epsilon, args.workers)
    doc = {"epsilon": args.epsilon, "cut_size": len(cut.selected)}
    if args.oracle:
        reference = oracle_cut(tree, cam, args.epsilon)
        identical = reference == cut.selected
        print(f"cuts identical: {'true' if identical else 'false'}")
        doc["cuts_identical"] = identical
    ref_img, ref_div = render_image(slt, cut.selected, cam, "reference")
    grp_img, grp_div = render_image(slt, cut.selected, cam, "grouped")
    doc["metrics"] = image_metrics(grp_img, ref_img)
    doc["reference"] = ref_div.to_json()
    doc["grouped"] = grp_div.to_json()
    doc["meta"] = _meta()
    print(
        "psnr {psnr:.2f} dB, ssim {ssim:.4f}, mixed groups {mixed} -> 0".format(
            psnr=doc["metrics"]["psnr"], ssim=doc["metrics"]["ssim"], mixed=ref_div.mixed
        )
    )
    _write_json(os.path.join(outdir, "compare.json"), doc)
    return 0


def cmd_sweep(args) -> int:
    outdir = _outdir(args)
    tree = load_scene(args.scene)
    rows: list[list] = []
    header = [
        "tau_s",
        "epsilon",
        "workers",
        "scheduler",
        "cut_size",
        "touched",
        "total",
        "mean",
        "stddev",
        "max_visited",
        "imbalance",
        "lod_cycles",
        "splat_cycles",
        "total_cycles",
        "dram_lod_bytes",
        "dram_baseline_bytes",
        "traffic_reduction_pct",
        "mixed_groups",
        "simd_utilization",
    ]
    for tau in args.taus:
        slt = build_sltree(tree, tau)
        cam = _resolve_camera(args, slt, outdir)
        cfg = _arch_config(args, slt)
        baseline = exhaustive_baseline(tree, cam, args.epsilons[0], cfg)
        for eps in args.epsilons:
            img_report = simulate_end_to_end(slt, cam, eps, cfg, args.mode)[1]
            lod_dram = img_report.cache_fills * tau * cfg.node_record_bytes + 4 * img_report.gaussians_rendered
            for workers in args.workers:
                for scheduler, fn in (("dynamic", traverse), ("static", traverse_static)):
                    cut, stats = fn(slt, cam, eps, workers)
                    rep = workload_report(stats)
                    rows.append(
                        [
                            tau,
                            eps,
                            workers,
                            scheduler,
                            len(cut.selected),
                            rep["touched"],
                            rep["total"],
                            rep["mean"],
                            rep["stddev"],
                            max(rep["per_worker"]),
                            rep["imbalance"],
                            img_report.lod_cycles,
                            img_report.splat_cycles,
                            img_report.total_cycles,
                            lod_dram,
                            baseline.dram_bytes_streaming,
                            100.0 * (1.0 - lod_dram / baseline.dram_bytes_streaming),
                            img_report.divergence.get("mixed"),
                            img_report.divergence.get("simd_utilization"),
                        ]
                    )
    path = os.path.join(outdir, "sweep.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lodsplat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, scene=False, slt=False, camera=False, epsilon=False, tau=False, mode=False):
        p.add_argument("--out", default=".", help="output directory (default: current)")
        if scene:
            p.add_argument("--scene", help="scene JSON path")
        if slt:
            p.add_argument("--slt", help="SLT1 binary path (alternative to --scene)")
        if camera:
            p.add_argument("--camera", help="camera JSON path (default: derived orbit camera)")
        if epsilon:
            p.add_argument("--epsilon", type=float, default=8.0, help="LoD threshold in pixels")
        if tau:
            p.add_argument("--tau", type=int, default=32, help="subtree size limit (default 32)")
        if mode:
            p.add_argument("--mode", choices=["reference", "grouped"], default="reference")

    p = sub.add_parser("gen", help="generate a synthetic scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, required=True, help="node budget")
    p.add_argument("--max-children", type=int, default=32)
    p.add_argument("--depth-limit", type=int, default=24)
    p.add_argument("--shrink", type=float, default=0.5)
    add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("partition", help="build and serialize the subtree partition")
    add_common(p, tau=True)
    p.add_argument("--scene", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("traverse", help="run the streaming LoD selection")
    add_common(p, scene=True, slt=True, camera=True, epsilon=True, tau=True)
    p.add_argument("--workers", type=int, default=8)
    p.add_argument("--weights", action="store_true", help="emit interpolation weights")
    p.set_defaults(func=cmd_traverse)

    p = sub.add_parser("render", help="rasterize the selected cut to a PPM image")
    add_common(p, scene=True, slt=True, camera=True, epsilon=True, tau=True, mode=True)
    p.add_argument("--weights", action="store_true", help="scale opacity by interpolation weights")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("simulate", help="cycle-approximate hardware simulation")
    add_common(p, scene=True, slt=True, camera=True, epsilon=True, tau=True, mode=True)
    p.add_argument("--arch", help="arch config JSON path (defaults otherwise)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="reference vs grouped blending, optional oracle check")
    add_common(p, camera=True, epsilon=True, tau=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--workers", type=int, default=8)
    p.add_argument("--oracle", action="store_true", help="also check the cut against the reference walk")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="CSV sweep across epsilon, tau, and worker counts")
    add_common(p, camera=True, mode=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--taus", type=_parse_ints, default=[32], help="e.g. 4,8,32")
    p.add_argument("--epsilons", type=_parse_floats, default=[2.0, 8.0, 32.0], help="e.g. 2,8,32")
    p.add_argument("--workers", type=_parse_ints, default=[1, 2, 4, 8], help="e.g. 1,2,4,8 or 1..8")
    p.add_argument("--arch", help="arch config JSON path")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("SLT_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LodsplatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
