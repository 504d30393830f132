"""Dense optical flow over consecutive frame pairs (motion ground truth).

Horn-Schunck with central-difference image gradients and Jacobi updates:
dependency-free, deterministic, and adequate for the few-pixels-per-frame
motion of small clips. Frames are converted to grayscale in their native
0..255 range; the smoothness weight is calibrated for that scale.
"""

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import FormatError, InputError
from .volume import Volume3

SRFL_MAGIC = b"SRFL"
SRFL_VERSION = 1

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class FlowParams:
    alpha: float = 10.0
    iterations: int = 200
    gray_weights: tuple = GRAY_WEIGHTS

    def __post_init__(self):
        if not self.alpha > 0:
            raise InputError(f"alpha must be > 0, got {self.alpha}")
        if self.iterations < 1:
            raise InputError(f"iterations must be >= 1, got {self.iterations}")
        if len(self.gray_weights) != 3:
            raise InputError("gray_weights needs 3 entries")


@dataclass(frozen=True)
class FlowField:
    """Per-frame-pair displacement grids, pixels/frame: u along w, v along h."""

    u: np.ndarray  # (pairs, h, w) float32
    v: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=np.float32)
        v = np.ascontiguousarray(self.v, dtype=np.float32)
        if u.ndim != 3 or u.shape != v.shape:
            raise InputError(f"flow grids must share a (pairs,h,w) shape, got {u.shape} / {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise InputError("flow contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def pair_count(self) -> int:
        return self.u.shape[0]

    @property
    def frame_shape(self) -> tuple:
        return self.u.shape[1:]


def to_grayscale(frame, weights=GRAY_WEIGHTS) -> np.ndarray:
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"frame must be (H,W) or (H,W,3), got {arr.shape}")
    return arr @ np.asarray(weights, dtype=np.float64)


def _neighbor_average(field: np.ndarray) -> np.ndarray:
    """Weighted 8-neighbor average (1/6 edges, 1/12 corners), replicate border."""
    p = np.pad(field, 1, mode="edge")
    h, w = field.shape
    out = (p[:h, 1 : 1 + w] + p[2:, 1 : 1 + w] + p[1 : 1 + h, :w] + p[1 : 1 + h, 2:]) / 6.0
    out += (p[:h, :w] + p[:h, 2:] + p[2:, :w] + p[2:, 2:]) / 12.0
    return out


def horn_schunck_pair(f1, f2, params: FlowParams = FlowParams()):
    """Estimate (u, v) between two grayscale grids of equal shape >= 2x2."""
    a = np.asarray(f1, dtype=np.float64)
    b = np.asarray(f2, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < 2:
        raise InputError(f"frames must be at least 2x2 grids, got {a.shape}")
    fx = 0.5 * (np.gradient(a, axis=1) + np.gradient(b, axis=1))
    fy = 0.5 * (np.gradient(a, axis=0) + np.gradient(b, axis=0))
    ft = b - a
    denom = params.alpha**2 + fx**2 + fy**2
    u = np.zeros_like(a)
    v = np.zeros_like(a)
    for _ in range(params.iterations):
        u_bar = _neighbor_average(u)
        v_bar = _neighbor_average(v)
        rate = (fx * u_bar + fy * v_bar + ft) / denom
        u = u_bar - fx * rate
        v = v_bar - fy * rate
    return u.astype(np.float32), v.astype(np.float32)


def dense_flow(frames, params: FlowParams = FlowParams()) -> FlowField:
    """Grayscale-convert then solve each consecutive pair."""
    frames = list(frames)
    if len(frames) < 2:
        raise InputError(f"need at least 2 frames, got {len(frames)}")
    gray = [to_grayscale(f, params.gray_weights) for f in frames]
    us, vs = [], []
    for a, b in zip(gray, gray[1:]):
        u, v = horn_schunck_pair(a, b, params)
        us.append(u)
        vs.append(v)
    return FlowField(np.stack(us), np.stack(vs))


def flow_magnitude(field: FlowField, t_dim: int | None = None) -> Volume3:
    """Per-voxel speed; the last pair is replicated so t_dim matches the
    relevance volumes (pairs+1 by default)."""
    mags = np.hypot(field.u.astype(np.float64), field.v.astype(np.float64))
    if t_dim is None:
        t_dim = field.pair_count + 1
    if t_dim < field.pair_count:
        raise InputError(f"t_dim {t_dim} shorter than pair count {field.pair_count}")
    reps = t_dim - field.pair_count
    if reps:
        tail = np.repeat(mags[-1:], reps, axis=0)
        mags = np.concatenate([mags, tail], axis=0)
    return Volume3(mags.astype(np.float32))


# --- SRFL file format --------------------------------------------------------
# magic 'SRFL' | version u16 LE | pairs,h,w u32 LE | per pair: u grid, v grid f32 LE


def write_srfl(path, field: FlowField) -> None:
    pairs, h, w = field.u.shape
    with open(path, "wb") as f:
        f.write(SRFL_MAGIC)
        f.write(struct.pack("<H", SRFL_VERSION))
        f.write(struct.pack("<III", pairs, h, w))
        for i in range(pairs):
            f.write(np.ascontiguousarray(field.u[i], dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(field.v[i], dtype="<f4").tobytes())


def read_srfl(path) -> FlowField:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != SRFL_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {SRFL_MAGIC!r}", 0)
    if len(raw) < 18:
        raise FormatError("truncated header", 4)
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != SRFL_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    pairs, h, w = struct.unpack_from("<III", raw, 6)
    if min(pairs, h, w) < 1:
        raise FormatError(f"dims must be positive, got {(pairs, h, w)}", 6)
    grid = h * w
    need = pairs * grid * 8
    have = len(raw) - 18
    if have != need:
        raise FormatError(f"payload is {have} bytes, expected {need}", 18 + min(have, need))
    data = np.frombuffer(raw, dtype="<f4", offset=18).reshape(pairs, 2, h, w)
    return FlowField(np.ascontiguousarray(data[:, 0]), np.ascontiguousarray(data[:, 1]))


class HornSchunck(BaseEstimator, TransformerMixin):
    """Estimator front end: transform(frames) -> FlowField."""

    def __init__(self, alpha: float = 10.0, iterations: int = 200, gray_weights=GRAY_WEIGHTS):
        self.alpha = alpha
        self.iterations = iterations
        self.gray_weights = gray_weights

    def _params(self) -> FlowParams:
        return FlowParams(self.alpha, self.iterations, tuple(self.gray_weights))

    def fit(self, X=None, y=None):
        self._params()
        return self

    def transform(self, X) -> FlowField:
        return dense_flow(X, self._params())

    def estimate_pair(self, f1, f2):
        return horn_schunck_pair(f1, f2, self._params())
