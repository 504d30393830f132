"""Deterministic probe clip: raw RGB packed as SRVL (channel planes
outermost), regenerated from a seed so no image codec or large binary is
involved. Byte-stable across runs and machines."""

import numpy as np

from .formats import write_srvl


def probe_clip(seed: int = 7, t: int = 16, side: int = 112) -> np.ndarray:
    """(3*t, side, side) float32 in 0..255: smooth drifting interference
    pattern with per-channel phases."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side]
    phases = rng.uniform(0, 2 * np.pi, size=3)
    planes = np.empty((3, t, side, side), dtype=np.float32)
    for c in range(3):
        for ti in range(t):
            wave = 127.0 + 80.0 * np.sin(
                2 * np.pi * (xx + 2.0 * ti) / 31.0 + phases[c]
            ) * np.cos(2 * np.pi * (yy - 1.5 * ti) / 27.0)
            planes[c, ti] = wave
    return np.clip(planes, 0.0, 255.0).reshape(3 * t, side, side)


def write_probe(path, seed: int = 7, t: int = 16, side: int = 112) -> None:
    write_srvl(path, probe_clip(seed, t, side))
