"""Dense 3D scalar volumes over (t, h, w) with Sobel filtering, statistics,
trilinear resampling, and bit-exact SRVL file I/O.

Volumes carry relevance maps, temporal edge maps, flow magnitudes, and masks.
Data is float32 row-major (t outer, then h, then w); statistics and filter
arithmetic accumulate in float64.
"""

import struct
import threading
from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError, InputError, SizeError
from .validation import as_float32_grid

# page faults dominate filtering cost on small volumes, so per-thread float64
# scratch is reused across calls; it never escapes the producing function
_scratch = threading.local()


def _scratch_f64(key: str, shape: tuple) -> np.ndarray:
    store = getattr(_scratch, "bufs", None)
    if store is None:
        store = _scratch.bufs = {}
    buf = store.get(key)
    if buf is None or buf.shape != shape:
        buf = store[key] = np.empty(shape, np.float64)
    return buf

AXES = ("t", "h", "w")

_DERIV_TAPS = np.array([-1.0, 0.0, 1.0])
_SMOOTH_TAPS = np.array([1.0, 2.0, 1.0])

SRVL_MAGIC = b"SRVL"
SRVL_VERSION = 1
_MAX_VOXELS = 1 << 40  # refuse absurd headers before allocating


@dataclass(frozen=True)
class Volume3:
    """Immutable dense scalar grid of shape (t_dim, h_dim, w_dim)."""

    data: np.ndarray

    def __post_init__(self):
        arr = as_float32_grid(self.data, 3, "volume")
        if arr.flags.writeable:
            arr = arr.copy()  # snapshot: later caller mutations must not leak in
            arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def t_dim(self) -> int:
        return self.data.shape[0]

    @property
    def h_dim(self) -> int:
        return self.data.shape[1]

    @property
    def w_dim(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Volume3):
            return NotImplemented
        return self.shape == other.shape and bool(np.all(self.data == other.data))


@dataclass(frozen=True)
class VolumeStats:
    mean: float
    std: float  # population
    min: float
    max: float
    sum: float


def sobel_kernel(axis: str) -> np.ndarray:
    """3x3x3 Sobel taps: derivative along `axis`, (1,2,1) smoothing along the rest.

    The taps sum to zero and are antisymmetric along the derivative axis.
    """
    if axis not in AXES:
        raise InputError(f"axis must be one of {AXES}, got {axis!r}")
    idx = AXES.index(axis)
    parts = [_SMOOTH_TAPS] * 3
    parts[idx] = _DERIV_TAPS
    return np.einsum("i,j,k->ijk", *parts)


def _deriv_pass(a: np.ndarray, axis: int, out: np.ndarray) -> np.ndarray:
    """(-1,0,1) taps along one axis, replicate boundary; float64 output."""
    m = np.moveaxis(a, axis, 0)
    o = np.moveaxis(out, axis, 0)
    np.subtract(m[2:], m[:-2], out=o[1:-1], dtype=np.float64)
    np.subtract(m[1], m[0], out=o[0], dtype=np.float64)
    np.subtract(m[-1], m[-2], out=o[-1], dtype=np.float64)
    return out


def _smooth_pass(a: np.ndarray, axis: int, out: np.ndarray) -> np.ndarray:
    """(1,2,1) taps along one axis, replicate boundary; float64 output."""
    m = np.moveaxis(a, axis, 0)
    o = np.moveaxis(out, axis, 0)
    np.add(m[:-2], m[1:-1], out=o[1:-1], dtype=np.float64)
    o[1:-1] += m[1:-1]
    o[1:-1] += m[2:]
    np.add(np.multiply(m[0], 3.0, dtype=np.float64), m[1], out=o[0], dtype=np.float64)
    np.add(m[-2], np.multiply(m[-1], 3.0, dtype=np.float64), out=o[-1], dtype=np.float64)
    return out


def sobel3(v: Volume3, axis: str) -> Volume3:
    """Cross-correlate with the 3D Sobel kernel, replicate-padded boundaries.

    Replicate padding keeps temporally constant volumes exactly zero at the
    clip edges; zero padding would report spurious change there. The kernel
    separates into 1D passes (derivative along `axis`, smoothing along the
    others), applied here in float64; with edge padding the passes commute,
    so this equals the direct 27-tap cross-correlation.
    """
    if axis not in AXES:
        raise InputError(f"axis must be one of {AXES}, got {axis!r}")
    if min(v.shape) < 3:
        raise SizeError(f"sobel3 needs every dimension >= 3, got {v.shape}")
    deriv_axis = AXES.index(axis)
    cur = v.data  # first pass upcasts to float64 on the fly
    scratch = (_scratch_f64("sobel0", v.shape), _scratch_f64("sobel1", v.shape))
    for ax in range(3):
        dst = scratch[ax % 2]  # ping-pong: the pass never reads its own output
        cur = _deriv_pass(cur, ax, dst) if ax == deriv_axis else _smooth_pass(cur, ax, dst)
    result = cur.astype(np.float32)
    result.flags.writeable = False
    return Volume3(result)


def volume_stats(v: Volume3) -> VolumeStats:
    """Population statistics over every voxel, accumulated in float64."""
    arr = v.data
    lo = float(arr.min())
    hi = float(arr.max())
    total = float(arr.sum(dtype=np.float64))
    mean = total / arr.size
    if lo == hi:
        std = 0.0  # exact: a constant volume never deviates
    else:
        diff = _scratch_f64("stats", arr.shape)
        np.subtract(arr, mean, out=diff, dtype=np.float64)
        flat = diff.ravel()
        std = float(np.sqrt(flat.dot(flat) / arr.size))
    return VolumeStats(mean=mean, std=std, min=lo, max=hi, sum=total)


def _axis_coords(n_in: int, n_out: int):
    """Align-corners source coordinates: lower index, upper index, upper weight."""
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, pos - i0


def _interp_axis(arr: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    i0, i1, w = _axis_coords(arr.shape[axis], n_out)
    lo = np.take(arr, i0, axis=axis)
    hi = np.take(arr, i1, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = n_out
    w = w.reshape(shape)
    return lo * (1.0 - w) + hi * w


def trilinear_resize(v: Volume3, out_dims: tuple) -> Volume3:
    """Align-corners trilinear interpolation to `out_dims` = (t, h, w)."""
    if len(out_dims) != 3 or any(int(d) < 1 for d in out_dims):
        raise SizeError(f"target dims must be three positive sizes, got {out_dims}")
    out = v.data.astype(np.float64)
    for axis, n_out in enumerate(out_dims):
        if out.shape[axis] != n_out:
            out = _interp_axis(out, int(n_out), axis)
    return Volume3(out.astype(np.float32))


# --- SRVL file format ------------------------------------------------------
# magic 'SRVL' | version u16 LE | t,h,w u32 LE | t*h*w float32 LE row-major


def write_srvl(path, v: Volume3) -> None:
    t, h, w = v.shape
    if max(t, h, w) > 0xFFFFFFFF:
        raise FormatError("dimension exceeds u32 range", 6)
    with open(path, "wb") as f:
        f.write(SRVL_MAGIC)
        f.write(struct.pack("<H", SRVL_VERSION))
        f.write(struct.pack("<III", t, h, w))
        f.write(np.ascontiguousarray(v.data, dtype="<f4").tobytes())


def read_srvl(path) -> Volume3:
    with open(path, "rb") as f:
        raw = f.read()
    magic = raw[:4]
    if magic != SRVL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SRVL_MAGIC!r}", 0)
    if len(raw) < 6:
        raise FormatError("truncated header: missing version", 4)
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != SRVL_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if len(raw) < 18:
        raise FormatError("truncated header: missing dims", 6)
    t, h, w = struct.unpack_from("<III", raw, 6)
    if min(t, h, w) < 1:
        raise FormatError(f"dims must be positive, got {(t, h, w)}", 6)
    count = t * h * w
    if count > _MAX_VOXELS:
        raise FormatError(f"dims {(t, h, w)} overflow the supported volume size", 6)
    need = count * 4
    have = len(raw) - 18
    if have < need:
        raise FormatError(
            f"payload truncated: expected {need} bytes, found {have}", 18 + have
        )
    if have > need:
        raise FormatError("trailing bytes after payload", 18 + need)
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=18)
    return Volume3(data.reshape(t, h, w))
