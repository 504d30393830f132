"""Seeded synthetic fixtures: weight bundles, moving-square clips, and
constructed relevance/flow volumes. Everything here is deterministic given
the seed; nothing in the core pipeline consumes randomness.

Also installed as the `selrel-fixture` command.
"""

import argparse
import sys
from collections import OrderedDict

import numpy as np

from .exceptions import InputError
from .net import (
    Model,
    expected_param_shapes,
    parse_architecture,
    resolve_architecture,
    write_srwb,
)
from .render import save_image_sequence
from .volume import Volume3, write_srvl


def random_weight_entries(arch_source: str, seed: int, bias_scale: float = 0.0) -> OrderedDict:
    """He-scaled normal weights for every parameterized layer, preset order."""
    text = resolve_architecture(arch_source)
    layers, input_shape = parse_architecture(text)
    rng = np.random.default_rng(seed)
    entries = OrderedDict()
    for spec, expect in zip(layers, expected_param_shapes(layers, input_shape)):
        if expect is None:
            continue
        w_shape, b_shape = expect
        fan_in = int(np.prod(w_shape[1:]))
        std = np.sqrt(2.0 / fan_in)
        entries[f"{spec.name}.weight"] = rng.normal(0.0, std, size=w_shape).astype(np.float32)
        bias = rng.normal(0.0, bias_scale, size=b_shape) if bias_scale > 0 else np.zeros(b_shape)
        entries[f"{spec.name}.bias"] = bias.astype(np.float32)
    return entries


def make_model(arch_source: str, seed: int, bias_scale: float = 0.0) -> Model:
    """In-memory model with seeded synthetic weights."""
    text = resolve_architecture(arch_source)
    layers, input_shape = parse_architecture(text)
    entries = random_weight_entries(arch_source, seed, bias_scale)
    weights = {}
    for spec in layers:
        if spec.parameterized:
            weights[spec.name] = (entries[f"{spec.name}.weight"], entries[f"{spec.name}.bias"])
    return Model(layers, weights, input_shape, arch_text=text)


def write_weight_bundle(arch_source: str, seed: int, path, bias_scale: float = 0.0) -> None:
    write_srwb(path, random_weight_entries(arch_source, seed, bias_scale))


# --- moving-square scene ------------------------------------------------------


def square_position(t: int, start_h: int, start_w: int, step_w: int = 1):
    return start_h, start_w + step_w * t


def moving_square_frames(
    n_frames: int = 16,
    size: int = 112,
    square: int = 16,
    start_h: int | None = None,
    start_w: int = 4,
    step_w: int = 1,
    seed: int = 0,
) -> list:
    """RGB uint8 frames: textured static background, bright square drifting
    one step per frame along w."""
    if start_h is None:
        start_h = size // 4
    last_w = start_w + step_w * (n_frames - 1) + square
    if last_w > size or start_h + square > size:
        raise InputError("square leaves the frame; shrink step, square, or frame count")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    background = (
        40.0
        + 25.0 * np.sin(2 * np.pi * xx / 23.0)
        + 25.0 * np.cos(2 * np.pi * yy / 17.0)
        + rng.normal(0.0, 2.0, size=(size, size))
    )
    frames = []
    for t in range(n_frames):
        frame = np.repeat(background[..., None], 3, axis=-1)
        h0, w0 = square_position(t, start_h, start_w, step_w)
        frame[h0 : h0 + square, w0 : w0 + square] = (220.0, 200.0, 60.0)
        frames.append(np.clip(np.rint(frame), 0, 255).astype(np.uint8))
    return frames


def moving_square_relevance(
    n_frames: int = 16,
    size: int = 32,
    square: int = 2,
    start_h: int = 4,
    start_w: int = 2,
    step_w: int = 1,
    static_value: float = 1.0,
    moving_value: float = 4.0,
):
    """Constructed relevance + flow-support pair for the motion-precision study.

    A static blob holds 80% of the relevance mass; a blob co-moving with the
    square holds the rest; the flow support marks exactly the square's
    trajectory. Defaults keep the 80/20 mass split exact.
    """
    rel = np.zeros((n_frames, size, size), dtype=np.float32)
    flow = np.zeros((n_frames, size, size), dtype=np.float32)
    blob = slice(size - 12, size - 4)  # 8x8 static blob, away from the trajectory
    for t in range(n_frames):
        rel[t, blob, blob] = static_value
        h0, w0 = square_position(t, start_h, start_w, step_w)
        if w0 + square > size or h0 + square > size:
            raise InputError("trajectory leaves the volume")
        rel[t, h0 : h0 + square, w0 : w0 + square] = moving_value
        flow[t, h0 : h0 + square, w0 : w0 + square] = 1.0
    return Volume3(rel), Volume3(flow)


def random_volume(dims, seed: int, loc: float = 0.0, scale: float = 1.0) -> Volume3:
    rng = np.random.default_rng(seed)
    return Volume3(rng.normal(loc, scale, size=tuple(dims)).astype(np.float32))


# --- probe clip ---------------------------------------------------------------


def probe_clip_rgb(seed: int = 7, t: int = 16, side: int = 112) -> np.ndarray:
    """Raw RGB clip (3,t,side,side), values in 0..255, smooth plus a drifting
    hotspot; used to exercise full forward passes without image codecs."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side]
    clip = np.empty((3, t, side, side), dtype=np.float32)
    phases = rng.uniform(0, 2 * np.pi, size=3)
    for c in range(3):
        for ti in range(t):
            wave = 127.0 + 80.0 * np.sin(
                2 * np.pi * (xx + 3.0 * ti) / 37.0 + phases[c]
            ) * np.cos(2 * np.pi * yy / 29.0)
            clip[c, ti] = wave
    return np.clip(clip, 0.0, 255.0)


def pack_clip(clip: np.ndarray) -> Volume3:
    """(3,t,h,w) -> SRVL-packable (3t,h,w), channel planes outermost."""
    c, t, h, w = clip.shape
    if c != 3:
        raise InputError(f"clip must have 3 channels, got {c}")
    return Volume3(np.ascontiguousarray(clip, dtype=np.float32).reshape(3 * t, h, w))


def unpack_clip(volume: Volume3) -> np.ndarray:
    """Inverse of pack_clip; validates the frame count is divisible by 3."""
    t3, h, w = volume.shape
    if t3 % 3:
        raise InputError(f"packed clip has {t3} planes, not divisible by 3")
    return volume.data.reshape(3, t3 // 3, h, w)


# --- command line ---------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="selrel-fixture", description="Generate seeded synthetic fixtures."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weights", help="seeded SRWB weight bundle for an architecture")
    p.add_argument("--arch", required=True, help="preset name or architecture file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bias-scale", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("moving-square", help="PNG frames of a drifting bright square")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--size", type=int, default=112)
    p.add_argument("--square", type=int, default=16)
    p.add_argument("--step", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("relevance", help="constructed relevance + flow-support volumes")
    p.add_argument("--out", required=True, help="relevance SRVL path")
    p.add_argument("--flow-out", required=True, help="flow-support SRVL path")
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--size", type=int, default=32)

    p = sub.add_parser("probe-clip", help="raw RGB clip packed as SRVL")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("random-volume", help="seeded gaussian volume as SRVL")
    p.add_argument("--out", required=True)
    p.add_argument("--dims", required=True, help="t,h,w")
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        if args.command == "weights":
            write_weight_bundle(args.arch, args.seed, args.out, args.bias_scale)
            print(f"wrote {args.out}")
        elif args.command == "moving-square":
            frames = moving_square_frames(
                n_frames=args.frames, size=args.size, square=args.square,
                step_w=args.step, seed=args.seed,
            )
            paths = save_image_sequence(frames, args.out, "frame")
            print(f"wrote {len(paths)} frames to {args.out}")
        elif args.command == "relevance":
            rel, flow = moving_square_relevance(n_frames=args.frames, size=args.size)
            write_srvl(args.out, rel)
            write_srvl(args.flow_out, flow)
            print(f"wrote {args.out} and {args.flow_out}")
        elif args.command == "probe-clip":
            write_srvl(args.out, pack_clip(probe_clip_rgb(args.seed)))
            print(f"wrote {args.out}")
        elif args.command == "random-volume":
            dims = tuple(int(d) for d in args.dims.split(","))
            if len(dims) != 3:
                raise InputError("--dims needs t,h,w")
            write_srvl(args.out, random_volume(dims, args.seed))
            print(f"wrote {args.out}")
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
