"""CLI entry point for vertex-radiosity: train, render, bench, genscene, version."""

import argparse
import csv
import json as json_mod
import os
import sys
import time

import numpy as np

from src import __version__
from src.errors import ValidationError, VertexRadiosityError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _train_config(args):
    """TrainConfig from --config plus the flags given on the command line."""
    from src.config import TrainConfig  # noqa: PLC0415

    overrides = {}
    if getattr(args, "encoder", None):
        overrides["encoder"] = args.encoder
    if getattr(args, "steps", None) is not None:
        overrides["total_steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "deterministic", False):
        overrides["deterministic"] = True
    if getattr(args, "no_lod", False):
        overrides["adaptive_lod"] = False
    if args.config:
        return TrainConfig.from_file(args.config, overrides)
    return TrainConfig.from_mapping(overrides)


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_version(_args):
    """Print current version."""
    print(f"vertex-radiosity v{__version__}")


def cmd_genscene(args):
    """Write a procedural test scene."""
    from src.scene import save_scene  # noqa: PLC0415
    from src.scenes import generate  # noqa: PLC0415

    scene = generate(args.kind, args.subdivisions)
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    obj_name = None
    if args.obj:
        obj_name = os.path.splitext(os.path.basename(args.out))[0] + ".obj"
    save_scene(scene, args.out, obj_name=obj_name)
    print(
        f"{args.kind}: {scene.mesh.n_vertices} vertices, {scene.mesh.n_faces} faces, "
        f"{len(scene.lights)} emissive faces -> {args.out}"
    )


def cmd_train(args):
    """Train a radiance model and write checkpoint, loss log and LOD export."""
    from src.checkpoint import save_checkpoint  # noqa: PLC0415
    from src.manifest import RunManifest  # noqa: PLC0415
    from src.scene import load_scene, save_obj  # noqa: PLC0415
    from src.trainer import Trainer  # noqa: PLC0415

    train_config = _train_config(args)
    out = _out_dir(args.out)
    manifest = RunManifest(command="train", seed=train_config.seed, config=train_config.to_dict())

    with manifest.phase("load"):
        scene = load_scene(args.scene)
    with manifest.phase("setup"):
        trainer = Trainer(scene, train_config)

    loss_path = os.path.join(out, "loss.csv")
    lod_path = os.path.join(out, "lod.jsonl")
    interval = train_config.log_interval
    window = []
    with open(loss_path, "w", newline="") as loss_file, manifest.phase("train"):
        writer = csv.writer(loss_file)
        writer.writerow(["step", "loss", "M", "lr", "params", "skipped"])
        skipped = 0

        def on_step(report):
            nonlocal skipped
            if report.skipped:
                skipped += 1
            else:
                window.append(report.loss)
            if report.step % interval == 0 or report.step == train_config.total_steps:
                mean_loss = float(np.mean(window)) if window else float("nan")
                writer.writerow(
                    [report.step, f"{mean_loss:.8g}", report.M, f"{report.lr:.6g}",
                     report.params, skipped]
                )
                window.clear()
                skipped = 0

        trainer.run(on_step)

    with open(lod_path, "w") as f:
        for lod_report in trainer.lod_reports:
            f.write(json_mod.dumps({"manifest": manifest.run_id, **lod_report.to_dict()}) + "\n")

    with manifest.phase("save"):
        checkpoint_path = os.path.join(out, "checkpoint.npz")
        save_checkpoint(checkpoint_path, trainer.model, trainer.optimizer, trainer.step,
                        train_config, manifest_id=manifest.run_id)
        mesh_path = os.path.join(out, "mesh.obj")
        save_obj(scene.mesh, mesh_path)
        face_lod_path = os.path.join(out, "face_lod.csv")
        face_lod = getattr(trainer.model.encoder, "face_lod", None)
        if face_lod is None:
            face_lod = np.ones(scene.mesh.n_faces, dtype=np.int64)
        with open(face_lod_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["face", "lod"])
            writer.writerows([i, int(k)] for i, k in enumerate(face_lod))

    for path in (checkpoint_path, loss_path, lod_path, mesh_path, face_lod_path):
        manifest.add_artifact(path)
    manifest.write(os.path.join(out, "manifest.json"))
    print(
        f"trained {train_config.encoder} model for {trainer.step} steps, "
        f"{trainer.model.encoder.param_count():,} encoder parameters -> {checkpoint_path}"
    )


def cmd_render(args):
    """Render with a trained checkpoint or the reference path tracer."""
    from src import config  # noqa: PLC0415
    from src.checkpoint import load_checkpoint  # noqa: PLC0415
    from src.manifest import RunManifest  # noqa: PLC0415
    from src.renderer import (  # noqa: PLC0415
        mse,
        neural_render,
        path_trace,
        read_pfm,
        relmse,
        write_pfm,
        write_ppm,
    )
    from src.scene import load_scene  # noqa: PLC0415

    if args.spp is not None:
        spp = args.spp
    else:
        spp = config.get("reference_spp" if args.reference else "spp")
    seed = args.seed if args.seed is not None else config.get("seed")
    if args.deterministic:
        workers = 1
    else:
        workers = args.workers if args.workers is not None else config.get("workers")
    tile_size = config.get("tile_size")
    out = _out_dir(args.out)

    scene = load_scene(args.scene)
    manifest = RunManifest(command="render", seed=seed, config={"spp": spp})
    start = time.perf_counter()
    with manifest.phase("render"):
        if args.reference:
            max_depth = args.max_depth if args.max_depth is not None else config.get("max_depth")
            manifest.config.update(mode="reference", max_depth=max_depth)
            image = path_trace(scene, spp, max_depth, seed, workers=workers, tile_size=tile_size)
        else:
            checkpoint = load_checkpoint(args.checkpoint, scene)
            manifest.config.update(mode="neural", checkpoint=os.path.basename(args.checkpoint),
                                   trained_by=checkpoint.manifest_id)
            image = neural_render(scene, checkpoint.model, spp, seed, workers=workers,
                                  tile_size=tile_size)
    seconds = time.perf_counter() - start

    pfm_path = os.path.join(out, "render.pfm")
    ppm_path = os.path.join(out, "render.ppm")
    write_pfm(pfm_path, image)
    write_ppm(ppm_path, image)
    manifest.add_artifact(pfm_path)
    manifest.add_artifact(ppm_path)

    report = {
        "spp": spp,
        "seconds": round(seconds, 3),
        "mean": [float(c) for c in image.reshape(-1, 3).mean(axis=0)],
        "manifest": manifest.run_id,
    }
    if args.compare:
        reference = read_pfm(args.compare)
        report["mse"] = mse(image, reference)
        report["relmse"] = relmse(image, reference, config.get("relmse_eps"))
    report_path = os.path.join(out, "report.json")
    with open(report_path, "w") as f:
        json_mod.dump(report, f, indent=2)
        f.write("\n")
    manifest.add_artifact(report_path)
    manifest.write(os.path.join(out, "manifest.json"))
    print(json_mod.dumps(report))


def _bench_rows(args, scene):
    from src import config  # noqa: PLC0415
    from src.encoders.hashgrid import dilated_bounds, init_hashgrid  # noqa: PLC0415
    from src.encoders.vertex import VertexFeatureEncoder  # noqa: PLC0415

    train_config = _train_config(args)
    bytes_per_param = config.get("bytes_per_param")
    rows = []

    vertex = VertexFeatureEncoder(scene.mesh, train_config.feature_dim, seed=train_config.seed)
    rows.append({"name": "vertex", "encoder": vertex})
    bounds = dilated_bounds(scene.mesh)
    for log2 in args.log2:
        cfg = train_config.from_mapping({**train_config.to_dict(), "hash_table_size_log2": log2})
        grid = init_hashgrid(cfg, cfg.seed, bounds, dtype=np.float32)
        rows.append({"name": f"hashgrid-2^{log2}", "encoder": grid})

    for checkpoint_path in args.checkpoint or []:
        from src.checkpoint import load_checkpoint  # noqa: PLC0415

        checkpoint = load_checkpoint(checkpoint_path, scene)
        rows.append(
            {
                "name": os.path.basename(os.path.dirname(os.path.abspath(checkpoint_path)))
                or checkpoint_path,
                "encoder": checkpoint.model.encoder,
                "model": checkpoint.model,
            }
        )

    vertex_params = vertex.param_count()
    table = []
    for row in rows:
        encoder = row["encoder"]
        params = encoder.param_count()
        table.append(
            {
                "name": row["name"],
                "encoder": encoder.name,
                "params": params,
                "bytes": params * bytes_per_param,
                "gathers_per_query": encoder.gathers_per_query,
                "ratio": params / vertex_params,
                "model": row.get("model"),
            }
        )
    return table


def cmd_bench(args):
    """Compare encoder memory, gather cost and (optionally) image error."""
    from src import config  # noqa: PLC0415
    from src.renderer import mse, neural_render, read_pfm  # noqa: PLC0415
    from src.scene import load_scene  # noqa: PLC0415

    scene = load_scene(args.scene)
    table = _bench_rows(args, scene)

    reference = read_pfm(args.reference) if args.reference else None
    spp = args.spp if args.spp is not None else config.get("spp")
    for row in table:
        model = row.pop("model")
        row["mse"] = None
        if model is not None and reference is not None:
            image = neural_render(scene, model, spp, seed=config.get("seed"))
            row["mse"] = mse(image, reference)

    if args.out:
        out = _out_dir(args.out)
        with open(os.path.join(out, "bench.json"), "w") as f:
            json_mod.dump(table, f, indent=2)
            f.write("\n")

    if args.format == "json":
        print(json_mod.dumps({"scene": args.scene, "vertices": scene.mesh.n_vertices,
                              "faces": scene.mesh.n_faces, "rows": table}))
        return

    print()
    print("Vertex-Radiosity Memory Benchmark")
    print("=" * 78)
    print(f"Scene:       {args.scene} ({scene.mesh.n_vertices:,} vertices, "
          f"{scene.mesh.n_faces:,} faces)")
    print(f"{'name':<22}{'params':>12}{'MB':>10}{'gathers':>9}{'ratio':>10}{'mse':>15}")
    for row in table:
        error = f"{row['mse']:.6g}" if row["mse"] is not None else "-"
        print(
            f"{row['name']:<22}{row['params']:>12,}{row['bytes'] / 1e6:>10.3f}"
            f"{row['gathers_per_query']:>9}{row['ratio']:>10.1f}{error:>15}"
        )


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="vertex-radiosity",
        description="Neural radiosity with vertex features and virtual LOD",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging on stderr")
    subparsers = parser.add_subparsers(dest="command")

    # version
    subparsers.add_parser("version", help="Show current version")

    # genscene
    gen_parser = subparsers.add_parser("genscene", help="Write a procedural test scene")
    gen_parser.add_argument("kind", choices=["furnace", "cornell", "quadwall"])
    gen_parser.add_argument("--out", required=True, help="Scene JSON file to write")
    gen_parser.add_argument("--subdivisions", type=int, default=None,
                            help="Tessellation of the scene's subdivided surfaces")
    gen_parser.add_argument("--obj", action="store_true",
                            help="Store the mesh in a sibling OBJ file")

    # train
    train_parser = subparsers.add_parser("train", help="Train a radiance model")
    train_parser.add_argument("--scene", required=True)
    train_parser.add_argument("--config", help="Training config JSON")
    train_parser.add_argument("--encoder", choices=["vertex", "hashgrid"])
    train_parser.add_argument("--steps", type=int)
    train_parser.add_argument("--seed", type=int)
    train_parser.add_argument("--workers", type=int, help="Threads for ray tracing")
    train_parser.add_argument("--deterministic", action="store_true")
    train_parser.add_argument("--no-lod", action="store_true", help="Disable adaptive LOD")
    train_parser.add_argument("--out", required=True, help="Output directory")

    # render
    render_parser = subparsers.add_parser("render", help="Render an image")
    render_parser.add_argument("--scene", required=True)
    source = render_parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint", help="Trained checkpoint (.npz)")
    source.add_argument("--reference", action="store_true", help="Path trace instead")
    render_parser.add_argument("--spp", type=int)
    render_parser.add_argument("--max-depth", type=int)
    render_parser.add_argument("--seed", type=int)
    render_parser.add_argument("--workers", type=int)
    render_parser.add_argument("--deterministic", action="store_true")
    render_parser.add_argument("--compare", help="Reference PFM for MSE / relMSE")
    render_parser.add_argument("--out", required=True, help="Output directory")

    # bench
    bench_parser = subparsers.add_parser("bench", help="Encoder memory/quality table")
    bench_parser.add_argument("--scene", required=True)
    bench_parser.add_argument("--config", help="Training config JSON")
    bench_parser.add_argument("--seed", type=int)
    bench_parser.add_argument("--log2", type=int, nargs="+", default=[17, 18, 19],
                              help="Hash table sizes (log2) to compare")
    bench_parser.add_argument("--checkpoint", action="append",
                              help="Trained checkpoint to include (repeatable)")
    bench_parser.add_argument("--reference", help="Reference PFM for checkpoint MSE")
    bench_parser.add_argument("--spp", type=int)
    bench_parser.add_argument(
        "--format", choices=["text", "json"], default="text", help="Output format"
    )
    bench_parser.add_argument("--out", help="Also write bench.json here")
    return parser


def main(argv=None):
    """CLI entry point. Returns the process exit code."""
    from src import log  # noqa: PLC0415

    parser = _build_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        return EXIT_OK

    log.configure(stderr=True, verbose=args.verbose)
    logger = log.get_logger("cli")

    commands = {
        "version": cmd_version,
        "genscene": cmd_genscene,
        "train": cmd_train,
        "render": cmd_render,
        "bench": cmd_bench,
    }
    try:
        commands[args.command](args)
    except ValidationError as e:
        logger.error("%s", e)
        return EXIT_VALIDATION
    except (VertexRadiosityError, OSError) as e:
        logger.error("%s", e)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
