"""Heatmap visualisation: overlay relevance volumes on source frames and
write deterministic PNG sequences for human inspection."""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .exceptions import InputError
from .explain import RelevanceVolume
from .validation import volume_data
from .volume import Volume3

COLORMAPS = ("grayscale", "diverging")
MODES = ("heatmap", "mask-composite")

_LABEL_STRIP = 16  # px


@dataclass(frozen=True)
class RenderOptions:
    colormap: str = "diverging"
    alpha: float = 0.5
    mode: str = "heatmap"
    eps_r: float = 1e-3  # negligible-relevance clamp, fraction of max|R|

    def __post_init__(self):
        if self.colormap not in COLORMAPS:
            raise InputError(f"colormap must be one of {COLORMAPS}")
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}")
        if not 0.0 <= self.alpha <= 1.0:
            raise InputError(f"alpha must be in [0,1], got {self.alpha}")
        if self.eps_r < 0:
            raise InputError(f"eps_r must be >= 0, got {self.eps_r}")


def zero_center(r, eps_r: float = 1e-3):
    """Clamp negligible magnitudes (|v| <= eps_r * max|v|) to exactly zero.

    No shift is applied: signed explanations are already centered and
    nonnegative ones must stay nonnegative. Idempotent, since the peak
    magnitude survives the clamp whenever eps_r < 1.
    """
    data = volume_data(r)
    cut = eps_r * float(np.abs(data).max())
    out = Volume3(np.where(np.abs(data) <= cut, np.float32(0.0), data))
    if isinstance(r, RelevanceVolume):
        return RelevanceVolume(out, r.method, r.class_idx, r.flag)
    return out


def _colormap(data: np.ndarray, name: str) -> np.ndarray:
    """Map a (t,h,w) volume to (t,h,w,3) float RGB in 0..255."""
    if name == "grayscale":
        peak = float(data.max())
        lum = np.zeros(data.shape) if peak <= 0 else np.clip(data, 0, None) * (255.0 / peak)
        return np.repeat(lum[..., None], 3, axis=-1)
    peak = float(np.abs(data).max())
    t = data / peak if peak > 0 else np.zeros(data.shape)
    base = 255.0 * (1.0 - np.abs(t))
    rgb = np.repeat(base[..., None], 3, axis=-1)
    rgb[..., 0] += 255.0 * np.clip(t, 0.0, 1.0)  # hot end: positive change
    rgb[..., 2] += 255.0 * np.clip(-t, 0.0, 1.0)
    return rgb


def _as_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def render_overlay(frames, r, opts: RenderOptions = RenderOptions()) -> list:
    """One (h,w,3) uint8 image per frame.

    heatmap: alpha-blend the colormapped relevance over the frame, hottest
    color at max |relevance|. mask-composite: show the frame only where
    relevance exceeds the support cut; elsewhere black.
    """
    data = volume_data(r)
    frames = [np.asarray(f) for f in frames]
    if len(frames) != data.shape[0]:
        raise InputError(f"{len(frames)} frames for {data.shape[0]} relevance frames")
    for i, f in enumerate(frames):
        if f.ndim != 3 or f.shape[2] != 3:
            raise InputError(f"frame {i} must be (h,w,3), got {f.shape}")
        if f.shape[:2] != data.shape[1:]:
            raise InputError(f"frame {i} is {f.shape[:2]}, relevance is {data.shape[1:]}")
    out = []
    if opts.mode == "heatmap":
        heat = _colormap(data.astype(np.float64), opts.colormap)
        for i, f in enumerate(frames):
            blend = (1.0 - opts.alpha) * f.astype(np.float64) + opts.alpha * heat[i]
            out.append(_as_uint8(blend))
    else:
        cut = opts.eps_r * float(np.abs(data).max())
        keep = data > cut
        for i, f in enumerate(frames):
            out.append(_as_uint8(f.astype(np.float64) * keep[i][..., None]))
    return out


def _label_strip(width: int, text: str) -> np.ndarray:
    img = Image.new("RGB", (width, _LABEL_STRIP), (0, 0, 0))
    draw = ImageDraw.Draw(img)
    draw.text((2, 2), text, fill=(255, 255, 255), font=ImageFont.load_default())
    return np.asarray(img)


def render_grid(rows) -> list:
    """rows: sequence of (label, image sequence). Returns one contact sheet
    per frame: labeled panels concatenated left to right in input order."""
    rows = [(label, [np.asarray(img) for img in seq]) for label, seq in rows]
    if not rows:
        raise InputError("no rows to render")
    length = len(rows[0][1])
    if any(len(seq) != length for _, seq in rows):
        raise InputError("image sequences have mismatched lengths")
    sheets = []
    for i in range(length):
        panels = []
        for label, seq in rows:
            img = seq[i]
            strip = _label_strip(img.shape[1], label)
            panels.append(np.concatenate([strip, img], axis=0))
        height = max(p.shape[0] for p in panels)
        padded = [
            np.pad(p, ((0, height - p.shape[0]), (0, 0), (0, 0))) for p in panels
        ]
        sheets.append(np.concatenate(padded, axis=1))
    return sheets


def save_image_sequence(images, out_dir, stem: str) -> list:
    """Write `<stem>_NNNN.png`, zero-padded, in sequence order."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, img in enumerate(images):
        path = os.path.join(out_dir, f"{stem}_{i:04d}.png")
        Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path, format="PNG")
        paths.append(path)
    return paths


def load_frames(frames_dir) -> list:
    """Read every raster image in a directory, lexicographic order, as RGB."""
    names = sorted(
        n for n in os.listdir(frames_dir)
        if n.lower().endswith((".png", ".bmp", ".ppm", ".tiff", ".tif"))
    )
    if not names:
        raise InputError(f"no raster frames found in {frames_dir}")
    frames = []
    for name in names:
        with Image.open(os.path.join(frames_dir, name)) as img:
            frames.append(np.asarray(img.convert("RGB")))
    return frames
