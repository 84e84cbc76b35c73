"""``hullforge`` command line: synth | pvh | train | infer | mesh | eval.

Every subcommand reads one JSON config (``--config``); flags override it.
Failures print a single line ``hullforge: error: <category>: <message>`` to
stderr and exit nonzero.
"""

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ._accel import backend_name, resolve_threads, set_kernel_threads
from .calib import RigFormatError, load_rig
from .config import ConfigError, PipelineConfig, load_config
from .matte import MatteFormatError, load_matte
from .mesh import TriangleMesh, export_obj, marching_cubes, select_threshold
from .metrics import EvalReport, format_table, image_scores, reproject_silhouette, validate_report, voxel_mse
from .net import ArchitectureMismatch, ModelFormatError, TrainingDiverged, load_model, predict, save_model, train
from .patch import extract_patches, patches_at, reassemble
from .pvh import GridFormatError, GridSpec, compute_pvh, load_grid, save_grid
from .synth import generate_dataset, load_manifest, make_camera_ring

log = logging.getLogger("hullforge")

EXIT_CODES = {
    "internal": 1,
    "usage": 2,
    "config": 3,
    "io": 4,
    "format": 5,
    "architecture": 6,
    "training": 7,
    "data": 8,
}

LOW, HIGH = "low", "high"
MODEL_FILE = "model.vae"
LOSS_FILE = "loss.csv"


class PipelineError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


def _usage(msg):
    return PipelineError("usage", msg)


# --------------------------------------------------------------------------- helpers


def refined_tag(stride):
    return f"refined-s{stride}"


def grid_path(cfg, tag, frame):
    return cfg.paths.resolve("grids") / tag / f"{frame}.pvh"


def _dataset(cfg):
    root = cfg.paths.resolve("dataset")
    if not (root / "manifest.json").exists():
        raise PipelineError("io", f"no dataset at {root} (run 'hullforge synth' first)")
    return root, load_manifest(root), load_rig(root / "rig.json")


def _grid_spec(cfg, rig):
    return GridSpec.covering(rig.capture_min, rig.capture_max, cfg.resolution)


def parse_frames(text, manifest):
    """``None`` | ``"a:b"`` (index range) | ``"00003,00007"`` / ``"3,7"`` -> frame entries."""
    entries = manifest["frames"]
    if text is None:
        return entries
    try:
        if ":" in text:
            a, b = text.split(":", 1)
            return entries[int(a) if a else 0 : int(b) if b else len(entries)]
        by_name = {e["frame"]: e for e in entries}
        out = []
        for tok in text.split(","):
            tok = tok.strip()
            out.append(by_name[tok] if tok in by_name else entries[int(tok)])
        return out
    except (ValueError, IndexError, KeyError):
        raise _usage(f"bad frame selection {text!r}") from None


def _split(manifest, name, frames=None):
    entries = parse_frames(frames, manifest) if frames else manifest["frames"]
    chosen = [e for e in entries if e["split"] == name] if frames is None else entries
    if not chosen:
        raise PipelineError("data", f"no {name} frames selected")
    return chosen


def _load_pair(cfg, tag_a, tag_b, frame):
    a = _read_grid(grid_path(cfg, tag_a, frame), frame)
    b = _read_grid(grid_path(cfg, tag_b, frame), frame)
    if a.dims != b.dims:
        raise PipelineError("data", f"frame {frame}: grid dims differ ({tag_a} {a.dims} vs {tag_b} {b.dims})")
    return a, b


def _read_grid(path, frame):
    if not path.exists():
        raise PipelineError("io", f"frame {frame}: missing grid {path}")
    return load_grid(path)


# --------------------------------------------------------------------------- subcommands


def cmd_synth(cfg, num_frames=None):
    """Render the synthetic dataset; returns the manifest path."""
    s = cfg.synth
    frames = s.frames if num_frames is None else num_frames
    if frames < 1:
        raise _usage("frame count must be >= 1")
    rig = make_camera_ring(s.cameras, s.ring_radius, s.ring_height, (s.image_size, s.image_size), s.focal_px)
    root = cfg.paths.resolve("dataset")
    generate_dataset(s.family_spec(), frames, rig, root, cfg.seed)
    path = root / "manifest.json"
    print(path)
    return path


def cmd_pvh(cfg, frames=None, subsets=(LOW, HIGH)):
    """Write one PVH grid per frame for each camera subset; returns the count written."""
    root, manifest, rig = _dataset(cfg)
    spec = _grid_spec(cfg, rig)
    views = {LOW: cfg.low_views, HIGH: cfg.high_views}
    written = 0
    for entry in parse_frames(frames, manifest):
        frame = entry["frame"]
        mattes = {}
        for tag in subsets:
            idx = views[tag]
            if not idx:
                raise _usage(f"camera subset {tag!r} is empty")
            cams = [rig[i] for i in idx]
            for cam in cams:
                if cam.camera_id not in mattes:
                    rel = entry["mattes"].get(cam.camera_id)
                    path = root / rel if rel else None
                    if path is None or not path.exists():
                        raise PipelineError("io", f"frame {frame}: missing matte for camera {cam.camera_id}")
                    mattes[cam.camera_id] = load_matte(path)
            grid = compute_pvh(cams, [mattes[c.camera_id] for c in cams], spec, cfg.fusion)
            out = grid_path(cfg, tag, frame)
            out.parent.mkdir(parents=True, exist_ok=True)
            save_grid(grid, out)
            written += 1
    log.info("pvh: wrote %d grids (%s fusion)", written, cfg.fusion)
    return written


def training_pairs(cfg, entries):
    """Input/target patch arrays from the low/high grids of ``entries``."""
    spec = cfg.patch_spec
    # first pass only counts patches so the arrays are allocated once
    corners = []
    for entry in entries:
        frame = entry["frame"]
        low, high = _load_pair(cfg, LOW, HIGH, frame)
        if min(low.dims) < spec.size:
            raise PipelineError("data", f"frame {frame}: grid {low.dims} smaller than patch size {spec.size}")
        corners.append(extract_patches(low, spec).corners)
    total = sum(len(c) for c in corners)
    if total == 0:
        raise PipelineError("data", "no non-empty training patches")
    x = np.empty((total,) + (spec.size,) * 3, dtype=np.float32)
    y = np.empty_like(x)
    k = 0
    for entry, c in zip(entries, corners):
        low, high = _load_pair(cfg, LOW, HIGH, entry["frame"])
        n = len(c)
        x[k : k + n] = patches_at(low, spec, c).values
        y[k : k + n] = patches_at(high, spec, c).values
        k += n
    return x, y


def cmd_train(cfg, frames=None):
    """Train on the training split; writes the model and a loss CSV.  Returns the losses."""
    _, manifest, _ = _dataset(cfg)
    entries = _split(manifest, "train", frames)
    x, y = training_pairs(cfg, entries)
    log.info("train: %d patch pairs from %d frames, backend %s", len(x), len(entries), backend_name())
    with threadpool_limits(limits=1):
        model, losses = train((x, y), cfg.train_config)
    out = cfg.paths.resolve("models")
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / MODEL_FILE)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "mean_loss"])
    for i, loss in enumerate(losses):
        w.writerow([i + 1, repr(float(loss))])
    (out / LOSS_FILE).write_text(buf.getvalue(), encoding="utf-8")
    return losses


def refine_grid(model, grid, spec, fill=0.0):
    patches = extract_patches(grid, spec)
    if len(patches):
        patches = patches.with_values(predict(model, patches.values))
    return reassemble(patches, fill)


def cmd_infer(cfg, frames=None, threads=None):
    """Refine low-view grids of the test split.  Returns ``{"frames", "seconds", "fps", "threads"}``."""
    _, manifest, _ = _dataset(cfg)
    entries = _split(manifest, "test", frames)
    path = cfg.paths.resolve("models") / MODEL_FILE
    if not path.exists():
        raise PipelineError("io", f"missing model {path} (run 'hullforge train' first)")
    model = load_model(path, expected=cfg.architecture)
    threads = resolve_threads(threads or cfg.threads or None)
    spec = cfg.patch_spec
    tag = refined_tag(spec.stride)
    grids = [_read_grid(grid_path(cfg, LOW, e["frame"]), e["frame"]) for e in entries]
    for g, e in zip(grids, entries):
        if min(g.dims) < spec.size:
            raise PipelineError("data", f"frame {e['frame']}: grid {g.dims} smaller than patch size {spec.size}")

    def work(i):
        set_kernel_threads(1)
        return refine_grid(model, grids[i], spec, cfg.net.fill)

    start = time.perf_counter()
    with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=threads) as pool:
        refined = list(pool.map(work, range(len(grids))))
    elapsed = time.perf_counter() - start
    for e, g in zip(entries, refined):
        out = grid_path(cfg, tag, e["frame"])
        out.parent.mkdir(parents=True, exist_ok=True)
        save_grid(g, out)
    fps = len(entries) / elapsed if elapsed > 0 else float("inf")
    dims = "x".join(str(d) for d in grids[0].dims)
    log.info("infer: %d frames of %s in %.3f s: %.3f frames/s (threads=%d)", len(entries), dims, elapsed, fps, threads)
    return {"frames": len(entries), "seconds": elapsed, "fps": fps, "threads": threads}


def cmd_mesh(cfg, frames=None, iso=None, source=None):
    """Mesh each selected grid to OBJ; returns ``{frame: iso used}``."""
    _, manifest, _ = _dataset(cfg)
    tag = source or refined_tag(cfg.stride)
    entries = _split(manifest, "test", frames) if tag.startswith("refined") else parse_frames(frames, manifest)
    out_dir = cfg.paths.resolve("meshes") / tag
    out_dir.mkdir(parents=True, exist_ok=True)
    used = {}
    for e in entries:
        frame = e["frame"]
        grid = _read_grid(grid_path(cfg, tag, frame), frame)
        if not np.any(grid.occupancy > 0):
            log.warning("mesh: frame %s grid is all zero; writing an empty mesh", frame)
            export_obj(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), out_dir / f"{frame}.obj")
            used[frame] = None
            continue
        level = select_threshold(grid) if iso is None else iso
        export_obj(marching_cubes(grid, level), out_dir / f"{frame}.obj")
        used[frame] = level
    return used


def _refined_tags(cfg):
    gdir = cfg.paths.resolve("grids")
    tags = [p.name for p in gdir.glob("refined-s*") if p.is_dir()] if gdir.exists() else []
    return sorted(tags, key=lambda t: -int(t.split("-s")[1]))


def cmd_eval(cfg, frames=None, reproject=True):
    """Volumetric MSE (x 1e-3) of input and refined grids against the high-view grid."""
    root, manifest, rig = _dataset(cfg)
    entries = _split(manifest, "test", frames)
    tags = [t for t in _refined_tags(cfg) if all(grid_path(cfg, t, e["frame"]).exists() for e in entries)]
    row_tags = {"input": LOW}
    row_tags.update({f"refined/s{t.split('-s')[1]}": t for t in tags})
    rows = {k: [] for k in row_tags}
    images = {k: [] for k in row_tags} if reproject and cfg.eval_cameras else {}
    for e in entries:
        frame = e["frame"]
        truth_path = grid_path(cfg, HIGH, frame)
        if not truth_path.exists():
            raise PipelineError("data", f"frame {frame}: missing ground-truth grid {truth_path}")
        truth = load_grid(truth_path)
        for label, tag in row_tags.items():
            g = _read_grid(grid_path(cfg, tag, frame), frame)
            if g.dims != truth.dims:
                raise PipelineError("data", f"frame {frame}: {tag} dims {g.dims} differ from ground truth")
            rows[label].append(voxel_mse(g, truth) * 1e3)
            for ci in cfg.eval_cameras if images else ():
                cam = rig[ci]
                matte = load_matte(root / e["mattes"][cam.camera_id]).values
                sil = reproject_silhouette(g, cam, 0.5)
                images[label].append(dict(image_scores(sil, (matte >= 0.5).astype(np.float64)), camera=cam.camera_id))
    kind = manifest.get("kind", "synthetic")
    report = EvalReport(f"{kind}-test", [e["frame"] for e in entries], rows, images, cfg.to_dict())
    doc = report.to_dict()
    validate_report(doc)
    out = cfg.paths.resolve("reports")
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    table = format_table([report])
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return report


# --------------------------------------------------------------------------- argument parsing


def _int_list(text):
    try:
        vals = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    return vals


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _usage(message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="pipeline config (JSON)")
    common.add_argument("--root", help="run directory (overrides paths.root)")
    common.add_argument("--seed", type=int)
    common.add_argument("--cameras", type=_int_list, help="low-view camera indices, e.g. 0,1")
    common.add_argument("--patch-size", type=int)
    common.add_argument("--stride", type=int)
    common.add_argument("--fusion")
    common.add_argument("--epochs", type=int)
    common.add_argument("--iso", type=float, help="fixed iso-value (mesh)")
    common.add_argument("--threads", type=int, help="worker threads (default: $HULLFORGE_THREADS or 1)")
    common.add_argument("--frames", help="frame selection: a:b or comma-separated names/indices")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="hullforge", description="Probabilistic visual hull refinement pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("synth", parents=[common], help="render a synthetic capture dataset")
    s.add_argument("--num-frames", type=int)
    s = sub.add_parser("pvh", parents=[common], help="build low- and high-view PVH grids")
    s.add_argument("--subset", choices=[LOW, HIGH], action="append", help="only this subset (repeatable)")
    sub.add_parser("train", parents=[common], help="train the refinement network")
    sub.add_parser("infer", parents=[common], help="refine low-view grids of the test split")
    s = sub.add_parser("mesh", parents=[common], help="extract OBJ meshes")
    s.add_argument("--source", help="grid set to mesh (default: refined at --stride)")
    s = sub.add_parser("eval", parents=[common], help="volumetric and reprojection error report")
    s.add_argument("--no-reproject", action="store_true")
    return p


def config_from_args(args):
    if args.cameras == ():
        raise _usage("--cameras selects an empty camera subset")
    cfg = load_config(args.config) if args.config else PipelineConfig()
    over = {
        "seed": args.seed,
        "low_views": args.cameras,
        "patch_size": args.patch_size,
        "stride": args.stride,
        "fusion": args.fusion,
        "threads": args.threads,
        "net__epochs": args.epochs,
        "paths__root": args.root,
    }
    try:
        return cfg.with_overrides(**over)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _category(exc):
    if isinstance(exc, PipelineError):
        return exc.category
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, ArchitectureMismatch):
        return "architecture"
    if isinstance(exc, (GridFormatError, MatteFormatError, RigFormatError, ModelFormatError)):
        return "format"
    if isinstance(exc, TrainingDiverged):
        return "training"
    if isinstance(exc, OSError):
        return "io"
    if isinstance(exc, ValueError):
        return "data"
    return "internal"


def run(args):
    cfg = config_from_args(args)
    cmd = args.command
    if cmd == "synth":
        cmd_synth(cfg, args.num_frames)
    elif cmd == "pvh":
        cmd_pvh(cfg, args.frames, tuple(args.subset) if args.subset else (LOW, HIGH))
    elif cmd == "train":
        cmd_train(cfg, args.frames)
    elif cmd == "infer":
        cmd_infer(cfg, args.frames, args.threads)
    elif cmd == "mesh":
        cmd_mesh(cfg, args.frames, args.iso, args.source)
    elif cmd == "eval":
        cmd_eval(cfg, args.frames, not args.no_reproject)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(name)s: %(message)s")
        run(args)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure becomes one categorised line
        cat = _category(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"hullforge: error: {cat}: {msg}", file=sys.stderr)
        return EXIT_CODES[cat]
    return 0


if __name__ == "__main__":
    sys.exit(main())
