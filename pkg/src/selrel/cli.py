"""Command-line pipelines: explain, select, flow, eval, bench, render, sweep.

Every artifact gets a `<name>.meta` sidecar (key=value lines) recording the
command, parameters, and content hashes of the inputs, so runs are
reproducible and `eval` can refuse to mix volumes from different models.
Flags may be preloaded from a key=value config file via --config; explicit
flags win. Environment variables are never consulted.
"""

import argparse
import glob
import hashlib
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .exceptions import EmptyRelevanceError, FormatError, InputError, LoadError, SizeError
from .explain import METHODS, RelevanceVolume, explainer_for
from .fixtures import random_volume, unpack_clip
from .flow import FlowParams, dense_flow, flow_magnitude, read_srfl, write_srfl
from .kvtext import parse_float_tuple, read_kv_file, write_kv_file
from .metrics import (
    MetricsReport,
    agreement,
    aggregate,
    benchmark,
    motion_precision,
    overhead_ms,
    render_csv,
    render_text,
    render_timing_csv,
    render_timing_text,
    selectivity_ratios,
)
from .net import ClipTensor, forward, load_model, preprocess_clip
from .render import RenderOptions, load_frames, render_grid, render_overlay, save_image_sequence
from .selective import SelectiveConfig, selective_relevance
from .volume import Volume3, read_srvl, write_srvl

STAGES = ("config", "load", "preprocess", "forward", "explain", "select", "flow",
          "eval", "bench", "render", "io")


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (InputError, LoadError, FormatError, SizeError, EmptyRelevanceError, OSError) as exc:
        raise StageError(stage, exc) from exc


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _hash_frames(frames_dir) -> str:
    digest = hashlib.sha256()
    for name in sorted(os.listdir(frames_dir)):
        path = os.path.join(frames_dir, name)
        if os.path.isfile(path):
            digest.update(name.encode())
            digest.update(_sha256(path).encode())
    return digest.hexdigest()


def _sidecar(artifact_path, fields: dict) -> None:
    meta = {"selrel_version": __version__}
    meta.update(fields)
    write_kv_file(f"{artifact_path}.meta", meta)


def _read_sidecar(artifact_path) -> dict:
    path = f"{artifact_path}.meta"
    if os.path.exists(path):
        return read_kv_file(path)
    return {}


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _expand_paths(tokens) -> list:
    paths = []
    for token in tokens:
        matches = sorted(glob.glob(token))
        paths.extend(matches if matches else [token])
    return paths


# --- explain ------------------------------------------------------------------


def _window_starts(n_frames: int, stride: int) -> list:
    if n_frames <= 16:
        return [0]
    return list(range(0, n_frames - 16 + 1, stride))


def cmd_explain(args) -> int:
    out = _outdir(args)
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise StageError("config", InputError(f"unknown method {m!r}; choose from {METHODS}"))
    means = parse_float_tuple(args.means, 3, "--means")
    model = _stage("load", load_model, args.model, args.weights)
    weights_hash = _sha256(args.weights)

    if args.clip:
        packed = _stage("io", read_srvl, args.clip)
        raw = _stage("preprocess", unpack_clip, packed)
        mean_arr = np.asarray(means, dtype=np.float32).reshape(3, 1, 1, 1)
        clips = [ClipTensor(raw - mean_arr)]
        source_hash = _sha256(args.clip)
        source = args.clip
    else:
        if not args.frames:
            raise StageError("config", InputError("explain needs --frames or --clip"))
        frames = _stage("io", load_frames, args.frames)
        starts = _window_starts(len(frames), args.window_stride)
        clips = [
            _stage("preprocess", preprocess_clip, frames[s : s + 16], means) for s in starts
        ]
        source_hash = _hash_frames(args.frames)
        source = args.frames

    base_meta = {
        "command": "explain",
        "model": args.model,
        "weights_sha256": weights_hash,
        "model_fingerprint": model.fingerprint,
        "source": source,
        "source_sha256": source_hash,
        "means": args.means,
        "channel_collapse": "sum",
    }

    def run_window(widx_clip):
        widx, clip = widx_clip
        logits, trace = forward(model, clip)
        class_idx = int(np.argmax(logits)) if args.class_idx is None else args.class_idx
        written = []
        if args.logits_only:
            path = os.path.join(out, f"logits_w{widx:03d}.csv")
            with open(path, "w", encoding="utf-8") as f:
                f.write("class,logit\n")
                for i, value in enumerate(np.asarray(logits, dtype=np.float64)):
                    f.write(f"{i},{float(value)!r}\n")
            _sidecar(path, dict(base_meta, window=str(widx), artifact="logits"))
            written.append(path)
            if args.dump_layer_stats:
                stats = {"model_fingerprint": model.fingerprint}
                for entry in trace.entries:
                    a = entry.x_out.astype(np.float64)
                    stats[f"layer.{entry.name}.shape"] = ",".join(map(str, a.shape))
                    stats[f"layer.{entry.name}.mean"] = repr(float(a.mean()))
                    stats[f"layer.{entry.name}.std"] = repr(float(a.std()))
                    stats[f"layer.{entry.name}.min"] = repr(float(a.min()))
                    stats[f"layer.{entry.name}.max"] = repr(float(a.max()))
                write_kv_file(args.dump_layer_stats, stats)
                written.append(args.dump_layer_stats)
            return written
        for method in methods:
            kwargs = {}
            if method in ("gradcam", "guided_gradcam") and args.target_layer:
                kwargs["target_layer"] = args.target_layer
            if method == "dtd":
                kwargs["channel_means"] = means
            explainer = explainer_for(method, model, **kwargs)
            rv = _stage("explain", explainer.explain_trace, trace, class_idx)
            path = os.path.join(out, f"{method}_c{class_idx}_w{widx:03d}.srvl")
            write_srvl(path, rv.volume)
            meta = dict(
                base_meta,
                artifact="relevance",
                method=method,
                window=str(widx),
                class_idx=str(class_idx),
            )
            if rv.flag:
                meta["flag"] = rv.flag
            _sidecar(path, meta)
            written.append(path)
        return written

    workers = max(1, args.workers)
    if workers == 1 or len(clips) == 1:
        results = [run_window(item) for item in enumerate(clips)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_window, enumerate(clips)))
    for paths in results:
        for path in paths:
            print(path)
    return 0


# --- select / sweep -------------------------------------------------------------


def _write_selective_triple(out, stem, result, meta_base) -> list:
    written = []
    for suffix, volume in (
        ("edge", result.edge_map),
        ("mask", result.mask.volume),
        ("selected", result.selected.volume),
    ):
        path = os.path.join(out, f"{stem}_{suffix}.srvl")
        write_srvl(path, volume)
        _sidecar(path, dict(meta_base, artifact=suffix))
        written.append(path)
    return written


def _selective_meta(args, rel_path, result, n_sigma) -> dict:
    meta = {
        "command": "select",
        "relevance": rel_path,
        "relevance_sha256": _sha256(rel_path),
        "n_sigma": repr(float(n_sigma)),
        "use_magnitude": str(not args.raw_mode),
        "threshold_value": repr(result.threshold_value),
        "threshold_provenance": f"{n_sigma} * population std of the temporal edge map",
    }
    parent = _read_sidecar(rel_path)
    for key in ("method", "class_idx", "model_fingerprint"):
        if key in parent:
            meta[f"parent_{key}"] = parent[key]
    if "method" in parent:
        meta["method"] = f"selective-{parent['method']}"
        meta["class_idx"] = parent.get("class_idx", "")
        if "model_fingerprint" in parent:
            meta["model_fingerprint"] = parent["model_fingerprint"]
    return meta


def cmd_select(args) -> int:
    out = _outdir(args)
    volume = _stage("io", read_srvl, args.relevance)
    cfg = SelectiveConfig(args.n_sigma, not args.raw_mode)
    result = _stage("select", selective_relevance, volume, cfg)
    stem = os.path.splitext(os.path.basename(args.relevance))[0]
    meta = _selective_meta(args, args.relevance, result, args.n_sigma)
    for path in _write_selective_triple(out, stem, result, meta):
        print(path)
    return 0


def cmd_sweep(args) -> int:
    out = _outdir(args)
    values = [float(x) for x in args.n_sigma.split(",")]
    if len(values) < 2 or any(b <= a for a, b in zip(values, values[1:])):
        raise StageError("config", InputError("--n-sigma sweep must be strictly increasing"))
    volume = _stage("io", read_srvl, args.relevance)
    stem = os.path.splitext(os.path.basename(args.relevance))[0]
    results = []
    for n_sigma in values:
        cfg = SelectiveConfig(n_sigma, not args.raw_mode)
        result = _stage("select", selective_relevance, volume, cfg)
        subdir = os.path.join(out, f"n{n_sigma:g}")
        os.makedirs(subdir, exist_ok=True)
        meta = _selective_meta(args, args.relevance, result, n_sigma)
        meta["command"] = "sweep"
        for path in _write_selective_triple(subdir, stem, result, meta):
            print(path)
        results.append((n_sigma, result))
    lines = ["# sweep", f"relevance={args.relevance}"]
    nested = True
    for (n_lo, res_lo), (n_hi, res_hi) in zip(results, results[1:]):
        ok = res_hi.mask.is_subset_of(res_lo.mask)
        nested = nested and ok
        lines.append(
            f"nested n={n_hi:g} within n={n_lo:g}: {'yes' if ok else 'NO'} "
            f"({res_hi.mask.count()} <= {res_lo.mask.count()} voxels)"
        )
    lines.append(f"monotonic={'yes' if nested else 'NO'}")
    report = os.path.join(out, "sweep.txt")
    with open(report, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    print(report)
    return 0 if nested else 1


# --- flow -----------------------------------------------------------------------


def cmd_flow(args) -> int:
    out = _outdir(args)
    frames = _stage("io", load_frames, args.frames)
    params = FlowParams(args.alpha, args.iters)
    field = _stage("flow", dense_flow, frames, params)
    magnitude = flow_magnitude(field)
    meta = {
        "command": "flow",
        "frames": args.frames,
        "frames_sha256": _hash_frames(args.frames),
        "alpha": repr(float(args.alpha)),
        "iterations": str(args.iters),
    }
    flow_path = os.path.join(out, "flow.srfl")
    write_srfl(flow_path, field)
    _sidecar(flow_path, dict(meta, artifact="flow"))
    mag_path = os.path.join(out, "flow_mag.srvl")
    write_srvl(mag_path, magnitude)
    _sidecar(mag_path, dict(meta, artifact="flow-magnitude"))
    print(flow_path)
    print(mag_path)
    return 0


# --- eval -----------------------------------------------------------------------


def _check_compatible(args, path_a, vol_a, path_b, vol_b) -> None:
    if vol_a.shape != vol_b.shape:
        if not args.force:
            raise StageError(
                "eval",
                InputError(
                    f"dims mismatch: {path_a} is {vol_a.shape}, {path_b} is {vol_b.shape} "
                    "(use --force to override)"
                ),
            )
        return
    fp_a = _read_sidecar(path_a).get("model_fingerprint")
    fp_b = _read_sidecar(path_b).get("model_fingerprint")
    if fp_a and fp_b and fp_a != fp_b and not args.force:
        raise StageError(
            "eval",
            InputError(
                f"model fingerprints differ between {path_a} and {path_b} "
                "(use --force to override)"
            ),
        )


def _paired(primary, other, what) -> list:
    if not other:
        return []
    if len(other) == 1:
        return other * len(primary)
    if len(other) != len(primary):
        raise StageError(
            "config",
            InputError(f"{what}: got {len(other)} files for {len(primary)} relevance volumes"),
        )
    return other


def cmd_eval(args) -> int:
    out = _outdir(args)
    rel_paths = _expand_paths(args.relevance)
    flow_paths = _paired(rel_paths, _expand_paths(args.flow_mag or []), "--flow-mag")
    base_paths = _paired(rel_paths, _expand_paths(args.baseline or []), "--baseline")
    against_paths = _paired(rel_paths, _expand_paths(args.against or []), "--against")
    if not (flow_paths or base_paths or against_paths):
        raise StageError(
            "config", InputError("eval needs at least one of --flow-mag/--baseline/--against")
        )
    by_method = {}
    for i, rel_path in enumerate(rel_paths):
        rel = _stage("io", read_srvl, rel_path)
        label = _read_sidecar(rel_path).get("method") or os.path.splitext(os.path.basename(rel_path))[0]
        report = MetricsReport(agreement_mode=args.agreement_mode)
        if flow_paths:
            mag = _stage("io", read_srvl, flow_paths[i])
            _check_compatible(args, rel_path, rel, flow_paths[i], mag)
            report.precision_pct = _stage("eval", motion_precision, rel, mag, args.eps_r, args.eps_o)
        if base_paths:
            base = _stage("io", read_srvl, base_paths[i])
            _check_compatible(args, rel_path, rel, base_paths[i], base)
            area, mass = _stage("eval", selectivity_ratios, rel, base, args.eps_r)
            report.selectivity_area_pct = area
            report.selectivity_mass_pct = mass
        if against_paths:
            other = _stage("io", read_srvl, against_paths[i])
            _check_compatible(args, rel_path, rel, against_paths[i], other)
            report.agreement_pct = _stage(
                "eval", agreement, rel, other, args.eps_r, args.agreement_mode
            )
        by_method.setdefault(label, []).append(report)
    summaries = []
    for label in sorted(by_method):
        summaries.extend(aggregate(by_method[label], label))
    eps_note = f"eps_r={'relative-default' if args.eps_r is None else args.eps_r} eps_o={args.eps_o} agreement_mode={args.agreement_mode}"
    text = render_text(summaries, title=f"metrics ({eps_note})")
    print(text, end="")
    txt_path = os.path.join(out, "report.txt")
    with open(txt_path, "w", encoding="utf-8") as f:
        f.write(text)
    csv_path = os.path.join(out, "report.csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(render_csv(summaries))
    return 0


# --- bench ----------------------------------------------------------------------


def _bench_volume(args) -> Volume3:
    if args.relevance:
        return _stage("io", read_srvl, args.relevance)
    dims = tuple(int(x) for x in args.dims.split(","))
    if len(dims) != 3:
        raise StageError("config", InputError("--dims needs t,h,w"))
    return random_volume(dims, args.seed)


def _bench_explain_setup(args):
    if not (args.model and args.weights):
        raise StageError("config", InputError("this bench task needs --model and --weights"))
    model = _stage("load", load_model, args.model, args.weights)
    means = parse_float_tuple(args.means, 3, "--means")
    if args.clip:
        packed = _stage("io", read_srvl, args.clip)
        raw = unpack_clip(packed)
        clip = ClipTensor(raw - np.asarray(means, dtype=np.float32).reshape(3, 1, 1, 1))
    elif args.frames:
        frames = _stage("io", load_frames, args.frames)
        clip = _stage("preprocess", preprocess_clip, frames[:16], means)
    else:
        raise StageError("config", InputError("this bench task needs --clip or --frames"))
    logits, trace = _stage("forward", forward, model, clip)
    class_idx = int(np.argmax(logits)) if args.class_idx is None else args.class_idx
    kwargs = {}
    if args.method in ("gradcam", "guided_gradcam") and args.target_layer:
        kwargs["target_layer"] = args.target_layer
    if args.method == "dtd":
        kwargs["channel_means"] = means
    explainer = explainer_for(args.method, model, **kwargs)
    return explainer, trace, class_idx


def cmd_bench(args) -> int:
    out = _outdir(args)
    cfg = SelectiveConfig(args.n_sigma)
    reports = []
    overhead = None
    if args.task == "selective-step":
        volume = _bench_volume(args)
        reports.append(
            benchmark(lambda: selective_relevance(volume, cfg), args.reps, args.warmup, "selective-step")
        )
    else:
        explainer, trace, class_idx = _bench_explain_setup(args)
        explain_report = benchmark(
            lambda: explainer.explain_trace(trace, class_idx),
            args.reps, args.warmup, f"explain:{args.method}",
        )
        reports.append(explain_report)
        if args.task == "combined":
            def combined():
                rv = explainer.explain_trace(trace, class_idx)
                selective_relevance(rv, cfg)
            combined_report = benchmark(
                combined, args.reps, args.warmup, f"combined:{args.method}+selective"
            )
            reports.append(combined_report)
            overhead = overhead_ms(combined_report, explain_report)
    text = render_timing_text(reports, overhead)
    print(text, end="")
    with open(os.path.join(out, "timing.txt"), "w", encoding="utf-8") as f:
        f.write(text)
    with open(os.path.join(out, "timing.csv"), "w", encoding="utf-8") as f:
        f.write(render_timing_csv(reports))
    return 0


# --- render ---------------------------------------------------------------------


def cmd_render(args) -> int:
    out = _outdir(args)
    frames = _stage("io", load_frames, args.frames)
    opts = RenderOptions(args.colormap, args.alpha, args.mode, args.eps_r)
    rel_paths = _expand_paths(args.relevance)
    overlays = []
    for path in rel_paths:
        volume = _stage("io", read_srvl, path)
        if volume.t_dim != len(frames):
            raise StageError(
                "render",
                InputError(f"{path} has {volume.t_dim} frames, directory has {len(frames)}"),
            )
        overlays.append((os.path.splitext(os.path.basename(path))[0], volume))
    written = []
    if args.grid or len(overlays) > 1:
        rows = [("frame", frames)]
        for label, volume in overlays:
            rows.append((label, _stage("render", render_overlay, frames, volume, opts)))
        sheets = _stage("render", render_grid, rows)
        written = save_image_sequence(sheets, out, args.stem)
    else:
        label, volume = overlays[0]
        images = _stage("render", render_overlay, frames, volume, opts)
        written = save_image_sequence(images, out, args.stem)
    for path in written:
        print(path)
    return 0


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selrel",
        description="Motion-specific explanations for 3D-CNN video classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value file supplying flag defaults")
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("explain", help="run a model and write relevance volumes")
    common(p)
    p.add_argument("--model", required=True, help="architecture preset name or file")
    p.add_argument("--weights", required=True, help="SRWB weight bundle")
    p.add_argument("--frames", help="directory of frame images")
    p.add_argument("--clip", help="raw RGB clip packed as SRVL (alternative to --frames)")
    p.add_argument("--method", default="dtd", help="comma list of: " + ",".join(METHODS))
    p.add_argument("--class", dest="class_idx", type=int, default=None,
                   help="target class (default: argmax)")
    p.add_argument("--means", default="0,0,0", help="per-channel means to subtract")
    p.add_argument("--target-layer", default=None, help="GradCAM target conv layer")
    p.add_argument("--window-stride", type=int, default=16, help="frame window stride")
    p.add_argument("--workers", type=int, default=1, help="parallel windows")
    p.add_argument("--logits-only", action="store_true", help="write logits, skip explanation")
    p.add_argument("--dump-layer-stats", default=None,
                   help="with --logits-only: write per-layer activation stats (key=value)")

    p = sub.add_parser("select", help="temporal edge map, mask, and filtered relevance")
    common(p)
    p.add_argument("--relevance", required=True, help="relevance SRVL file")
    p.add_argument("--n-sigma", type=float, default=4.0, help="threshold in edge-map stds")
    p.add_argument("--raw-mode", action="store_true",
                   help="threshold the signed response instead of |response|")

    p = sub.add_parser("sweep", help="select across several thresholds, check nesting")
    common(p)
    p.add_argument("--relevance", required=True)
    p.add_argument("--n-sigma", default="1,2,3,4", help="strictly increasing comma list")
    p.add_argument("--raw-mode", action="store_true")

    p = sub.add_parser("flow", help="dense optical flow and its magnitude volume")
    common(p)
    p.add_argument("--frames", required=True)
    p.add_argument("--alpha", type=float, default=10.0, help="smoothness weight")
    p.add_argument("--iters", type=int, default=200, help="solver iterations")

    p = sub.add_parser("eval", help="precision / selectivity / agreement metrics")
    common(p)
    p.add_argument("--relevance", nargs="+", required=True, help="relevance files or globs")
    p.add_argument("--flow-mag", nargs="+", default=None, help="flow magnitude volumes")
    p.add_argument("--baseline", nargs="+", default=None, help="baseline volumes for selectivity")
    p.add_argument("--against", nargs="+", default=None, help="second method for agreement")
    p.add_argument("--eps-r", type=float, default=None,
                   help="absolute relevance support cut (default: 1e-3 * max|R|)")
    p.add_argument("--eps-o", type=float, default=1e-2, help="flow support cut, px/frame")
    p.add_argument("--agreement-mode", choices=("iou", "directional"), default="iou")
    p.add_argument("--force", action="store_true", help="compare despite dim/model mismatches")

    p = sub.add_parser("bench", help="wall-clock the explanation / selective step")
    common(p)
    p.add_argument("--task", choices=("explain-method", "selective-step", "combined"),
                   required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--n-sigma", type=float, default=4.0)
    p.add_argument("--relevance", help="selective-step input volume")
    p.add_argument("--dims", default="16,112,112", help="selective-step random volume dims")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model")
    p.add_argument("--weights")
    p.add_argument("--frames")
    p.add_argument("--clip")
    p.add_argument("--method", default="dtd", choices=METHODS)
    p.add_argument("--class", dest="class_idx", type=int, default=None)
    p.add_argument("--means", default="0,0,0")
    p.add_argument("--target-layer", default=None)

    p = sub.add_parser("render", help="overlay relevance heatmaps on frames")
    common(p)
    p.add_argument("--frames", required=True)
    p.add_argument("--relevance", nargs="+", required=True)
    p.add_argument("--mode", choices=("heatmap", "mask-composite"), default="heatmap")
    p.add_argument("--colormap", choices=("grayscale", "diverging"), default="diverging")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--eps-r", type=float, default=1e-3)
    p.add_argument("--stem", default="overlay")
    p.add_argument("--grid", action="store_true", help="contact sheets with the source frames")
    return parser


_HANDLERS = {
    "explain": cmd_explain,
    "select": cmd_select,
    "sweep": cmd_sweep,
    "flow": cmd_flow,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "render": cmd_render,
}


def _inject_config(argv: list) -> list:
    """Splice config-file pairs right after the subcommand; explicit flags win."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        return argv
    pairs = read_kv_file(argv[idx + 1])
    tokens = []
    for key, value in pairs.items():
        tokens.extend([f"--{key}", value])
    return argv[:1] + tokens + argv[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command = argv[0] if argv and argv[0] in _HANDLERS else "args"
    try:
        if command != "args":
            argv = _stage("config", _inject_config, argv)
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except (InputError, LoadError, FormatError, SizeError, EmptyRelevanceError) as exc:
        print(f"error [{command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
