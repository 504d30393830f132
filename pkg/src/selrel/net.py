"""Minimal 3D-CNN definition, weight loading, preprocessing, and forward
inference with full activation tracing.

Architecture files are line-oriented: one layer per line, ``kind key=value
...`` (see docs/architecture-files.md). Weights travel in SRWB bundles.
"""

import hashlib
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _layers
from .exceptions import FormatError, InputError, LoadError
from .kvtext import parse_int_tuple, parse_kv_line
from .validation import check_finite

SRWB_MAGIC = b"SRWB"
SRWB_VERSION = 1
_MAX_PARAMS = 1 << 33

CLIP_FRAMES = 16
CLIP_SIDE = 112
SCALE_SHORT_SIDE = 128

_KINDS = ("conv3d", "relu", "maxpool3d", "flatten", "dense", "gap3d")
_AUTO_PREFIX = {
    "conv3d": "conv",
    "relu": "relu",
    "maxpool3d": "pool",
    "flatten": "flatten",
    "dense": "fc",
    "gap3d": "gap",
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    out_channels: int = 0
    kernel: tuple = ()
    stride: tuple = ()
    padding: tuple = ()
    window: tuple = ()
    out_features: int = 0

    @property
    def parameterized(self) -> bool:
        return self.kind in ("conv3d", "dense")


@dataclass(frozen=True)
class ClipTensor:
    """Preprocessed model input, channel-major (3, t, h, w) float32."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[0] != 3:
            raise InputError(f"clip must be (3,t,h,w), got {arr.shape}")
        check_finite(arr, "clip")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self):
        return self.data.shape


@dataclass
class TraceEntry:
    name: str
    kind: str
    x_in: np.ndarray
    x_out: np.ndarray
    argmax: np.ndarray | None = None


@dataclass
class ActivationTrace:
    """Per-layer activations for one forward pass; inputs are stored by
    reference (layer i's input is layer i-1's output)."""

    model_fingerprint: str
    clip: np.ndarray
    entries: list = field(default_factory=list)

    def entry(self, name: str) -> TraceEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise InputError(f"layer {name!r} not present in trace")

    @property
    def logits(self) -> np.ndarray:
        return self.entries[-1].x_out


class Model:
    """Validated layer stack plus loaded weights.

    Immutable after construction; safe to share across workers.
    """

    def __init__(self, layers, weights, input_shape, arch_text="", weight_digest=""):
        self.layers = tuple(layers)
        self.weights = dict(weights)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.arch_text = arch_text
        self.shapes = infer_shapes(self.layers, self.input_shape)
        self.class_count = int(self.shapes[-1][0])
        self._validate_weights()
        digest = hashlib.sha256()
        digest.update(canonical_arch(self.layers, self.input_shape).encode())
        digest.update(weight_digest.encode() or self._weights_digest())
        self.fingerprint = digest.hexdigest()

    def _weights_digest(self) -> bytes:
        h = hashlib.sha256()
        for name in sorted(self.weights):
            w, b = self.weights[name]
            h.update(name.encode())
            h.update(np.ascontiguousarray(w, dtype="<f4").tobytes())
            h.update(np.ascontiguousarray(b, dtype="<f4").tobytes())
        return h.hexdigest().encode()

    def _validate_weights(self):
        for spec, expect in zip(self.layers, expected_param_shapes(self.layers, self.input_shape)):
            if expect is None:
                continue
            if spec.name not in self.weights:
                raise LoadError(f"missing parameters for layer {spec.name!r}")
            w, b = self.weights[spec.name]
            w_shape, b_shape = expect
            if tuple(w.shape) != w_shape:
                raise LoadError(
                    f"layer {spec.name!r}: weight shape {tuple(w.shape)} != expected {w_shape}"
                )
            if tuple(b.shape) != b_shape:
                raise LoadError(
                    f"layer {spec.name!r}: bias shape {tuple(b.shape)} != expected {b_shape}"
                )
        expected_names = {s.name for s in self.layers if s.parameterized}
        extra = set(self.weights) - expected_names
        if extra:
            raise LoadError(f"weights provided for unknown layers: {sorted(extra)}")

    # sklearn-flavoured conveniences
    def predict(self, clip) -> np.ndarray:
        return forward(self, clip)[0]

    def __repr__(self):
        return f"Model(layers={len(self.layers)}, input_shape={self.input_shape}, classes={self.class_count})"


# --- architecture text ------------------------------------------------------


def parse_architecture(text: str):
    """Parse architecture text; returns (layer specs, input_shape)."""
    input_shape = None
    specs = []
    counters = dict.fromkeys(_KINDS, 0)
    names = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, _, rest = line.partition(" ")
        try:
            fields = parse_kv_line(rest)
        except InputError as exc:
            raise LoadError(f"line {lineno}: {exc}") from exc
        try:
            if kind == "input":
                if input_shape is not None:
                    raise InputError("duplicate input line")
                input_shape = _parse_input(fields)
                continue
            if input_shape is None:
                raise InputError("first line must declare the input shape")
            spec = _parse_layer(kind, fields, counters)
        except InputError as exc:
            raise LoadError(f"line {lineno}: {exc}") from exc
        if spec.name in names:
            raise LoadError(f"line {lineno}: duplicate layer name {spec.name!r}")
        names.add(spec.name)
        specs.append(spec)
    if input_shape is None:
        raise LoadError("architecture has no input line")
    if not specs:
        raise LoadError("architecture has no layers")
    return tuple(specs), input_shape


def _parse_input(fields):
    for key in ("channels", "t", "h", "w"):
        if key not in fields:
            raise InputError(f"input line missing {key}=")
    shape = tuple(int(fields[k]) for k in ("channels", "t", "h", "w"))
    if shape[0] != 3:
        raise InputError(f"input channels must be 3 (RGB), got {shape[0]}")
    if min(shape) < 1:
        raise InputError(f"input dims must be positive, got {shape}")
    return shape


def _pop_int(fields, key, what):
    if key not in fields:
        raise InputError(f"{what} is missing {key}=")
    try:
        return int(fields.pop(key))
    except ValueError as exc:
        raise InputError(f"{what}: {key} must be an integer") from exc


def _parse_layer(kind, fields, counters):
    if kind not in _KINDS:
        raise InputError(f"unknown layer kind {kind!r}")
    counters[kind] += 1
    name = fields.pop("name", f"{_AUTO_PREFIX[kind]}{counters[kind]}")
    what = f"{kind} {name!r}"
    if kind == "conv3d":
        out = _pop_int(fields, "out", what)
        if "kernel" not in fields:
            raise InputError(f"{what} is missing kernel=")
        kernel = parse_int_tuple(fields.pop("kernel"), 3, "kernel")
        stride = parse_int_tuple(fields.pop("stride", "1,1,1"), 3, "stride")
        padding = parse_int_tuple(fields.pop("pad", "0,0,0"), 3, "pad")
        if out < 1 or min(kernel) < 1 or min(stride) < 1 or min(padding) < 0:
            raise InputError(f"{what}: sizes out of range")
        spec = LayerSpec(kind, name, out_channels=out, kernel=kernel, stride=stride, padding=padding)
    elif kind == "maxpool3d":
        if "window" not in fields:
            raise InputError(f"{what} is missing window=")
        window = parse_int_tuple(fields.pop("window"), 3, "window")
        stride = parse_int_tuple(fields.pop("stride"), 3, "stride") if "stride" in fields else window
        if min(window) < 1 or min(stride) < 1:
            raise InputError(f"{what}: sizes out of range")
        spec = LayerSpec(kind, name, window=window, stride=stride)
    elif kind == "dense":
        out = _pop_int(fields, "out", what)
        if out < 1:
            raise InputError(f"{what}: out must be >= 1")
        spec = LayerSpec(kind, name, out_features=out)
    else:
        spec = LayerSpec(kind, name)
    if fields:
        raise InputError(f"{what}: unknown keys {sorted(fields)}")
    return spec


def canonical_arch(layers, input_shape) -> str:
    c, t, h, w = input_shape
    lines = [f"input channels={c} t={t} h={h} w={w}"]
    for s in layers:
        parts = [s.kind, f"name={s.name}"]
        if s.kind == "conv3d":
            parts.append(f"out={s.out_channels}")
            parts.append("kernel=" + ",".join(map(str, s.kernel)))
            parts.append("stride=" + ",".join(map(str, s.stride)))
            parts.append("pad=" + ",".join(map(str, s.padding)))
        elif s.kind == "maxpool3d":
            parts.append("window=" + ",".join(map(str, s.window)))
            parts.append("stride=" + ",".join(map(str, s.stride)))
        elif s.kind == "dense":
            parts.append(f"out={s.out_features}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def infer_shapes(layers, input_shape):
    """Activation shape after each layer; raises LoadError on any mismatch."""
    shape = tuple(input_shape)
    shapes = []
    for s in layers:
        if s.kind == "conv3d":
            _need_rank(shape, 4, s)
            to, ho, wo = _layers.conv3d_out_shape(shape, s.kernel, s.stride, s.padding)
            if min(to, ho, wo) < 1:
                raise LoadError(f"layer {s.name!r}: kernel {s.kernel} exceeds input {shape}")
            shape = (s.out_channels, to, ho, wo)
        elif s.kind == "maxpool3d":
            _need_rank(shape, 4, s)
            if any(win > dim for win, dim in zip(s.window, shape[1:])):
                raise LoadError(f"layer {s.name!r}: window {s.window} exceeds input {shape}")
            to = (shape[1] - s.window[0]) // s.stride[0] + 1
            ho = (shape[2] - s.window[1]) // s.stride[1] + 1
            wo = (shape[3] - s.window[2]) // s.stride[2] + 1
            shape = (shape[0], to, ho, wo)
        elif s.kind == "relu":
            pass
        elif s.kind == "flatten":
            _need_rank(shape, 4, s)
            shape = (int(np.prod(shape)),)
        elif s.kind == "gap3d":
            _need_rank(shape, 4, s)
            shape = (shape[0],)
        elif s.kind == "dense":
            _need_rank(shape, 1, s)
            shape = (s.out_features,)
        shapes.append(shape)
    if len(shapes[-1]) != 1:
        raise LoadError("model must end with a vector of logits")
    return tuple(shapes)


def _need_rank(shape, rank, spec):
    if len(shape) != rank:
        raise LoadError(f"layer {spec.name!r} expects rank-{rank} input, got shape {shape}")


def expected_param_shapes(layers, input_shape):
    """Per layer: None or ((weight shape), (bias shape))."""
    shape = tuple(input_shape)
    shapes = infer_shapes(layers, input_shape)
    out = []
    for s, after in zip(layers, shapes):
        if s.kind == "conv3d":
            out.append(((s.out_channels, shape[0]) + tuple(s.kernel), (s.out_channels,)))
        elif s.kind == "dense":
            out.append(((s.out_features, shape[0]), (s.out_features,)))
        else:
            out.append(None)
        shape = after
    return out


# --- presets ----------------------------------------------------------------

PRESETS = {
    # reference 8-conv 3D CNN; accepts 3x16x112x112 and emits 101 logits
    "c3d-101": """
input channels=3 t=16 h=112 w=112
conv3d name=conv1 out=64 kernel=3,3,3 pad=1,1,1
relu
maxpool3d window=1,2,2
conv3d name=conv2 out=128 kernel=3,3,3 pad=1,1,1
relu
maxpool3d window=2,2,2
conv3d name=conv3a out=256 kernel=3,3,3 pad=1,1,1
relu
conv3d name=conv3b out=256 kernel=3,3,3 pad=1,1,1
relu
maxpool3d window=2,2,2
conv3d name=conv4a out=512 kernel=3,3,3 pad=1,1,1
relu
conv3d name=conv4b out=512 kernel=3,3,3 pad=1,1,1
relu
maxpool3d window=2,2,2
conv3d name=conv5a out=512 kernel=3,3,3 pad=1,1,1
relu
conv3d name=conv5b out=512 kernel=3,3,3 pad=1,1,1
relu
maxpool3d window=2,2,2
flatten
dense name=fc6 out=4096
relu
dense name=fc7 out=4096
relu
dense name=fc8 out=101
""",
    # small nets used by tests and demos
    "tiny-linear": """
input channels=3 t=4 h=8 w=8
flatten
dense name=out out=6
""",
    "tiny-conv": """
input channels=3 t=4 h=8 w=8
conv3d name=conv1 out=4 kernel=3,3,3 pad=1,1,1
relu
maxpool3d window=2,2,2
conv3d name=conv2 out=6 kernel=3,3,3 pad=1,1,1
relu
flatten
dense name=out out=5
""",
    "tiny-gap": """
input channels=3 t=4 h=8 w=8
conv3d name=conv1 out=5 kernel=3,3,3 pad=1,1,1
relu
gap3d
dense name=out out=4
""",
    "tiny-cam": """
input channels=3 t=4 h=8 w=8
conv3d name=conv1 out=5 kernel=3,3,3 pad=1,1,1
gap3d
dense name=out out=4
""",
    "micro-112": """
input channels=3 t=16 h=112 w=112
conv3d name=conv1 out=4 kernel=3,3,3 stride=2,4,4 pad=1,1,1
relu
maxpool3d window=2,2,2
flatten
dense name=out out=5
""",
}

TINY_PRESETS = ("tiny-linear", "tiny-conv", "tiny-gap", "tiny-cam", "micro-112")


def resolve_architecture(source: str) -> str:
    """Accept a preset name, a file path, or literal architecture text."""
    if source in PRESETS:
        return PRESETS[source]
    if "\n" in source:
        return source
    if os.path.exists(source):
        with open(source, "r", encoding="utf-8") as f:
            return f.read()
    raise LoadError(
        f"unknown architecture {source!r}: not a preset ({', '.join(sorted(PRESETS))}) "
        "and no such file"
    )


# --- SRWB weight bundles ----------------------------------------------------
# magic 'SRWB' | version u16 LE | count u32 LE | entries:
#   name_len u16 LE | name UTF-8 | ndim u8 | dims u32 LE each | f32 LE payload


def write_srwb(path, entries) -> None:
    """entries: ordered mapping of name -> float32 ndarray."""
    with open(path, "wb") as f:
        f.write(SRWB_MAGIC)
        f.write(struct.pack("<H", SRWB_VERSION))
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries.items():
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise InputError(f"entry name too long: {name!r}")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            if arr.ndim > 0xFF:
                raise InputError(f"entry {name!r} has too many dims")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


def read_srwb(path) -> dict:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != SRWB_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {SRWB_MAGIC!r}", 0)
    if len(raw) < 10:
        raise FormatError("truncated header", 4)
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != SRWB_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (count,) = struct.unpack_from("<I", raw, 6)
    offset = 10
    entries = {}
    for _ in range(count):
        if offset + 2 > len(raw):
            raise FormatError("truncated entry header", offset)
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        if offset + name_len > len(raw):
            raise FormatError("truncated entry name", offset)
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if offset + 1 > len(raw):
            raise FormatError(f"entry {name!r}: missing ndim", offset)
        ndim = raw[offset]
        offset += 1
        if offset + 4 * ndim > len(raw):
            raise FormatError(f"entry {name!r}: truncated dims", offset)
        dims = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        if size < 0 or size > _MAX_PARAMS:
            raise FormatError(f"entry {name!r}: dims {dims} overflow", offset - 4 * ndim)
        need = size * 4
        if offset + need > len(raw):
            raise FormatError(
                f"entry {name!r}: payload truncated ({len(raw) - offset} of {need} bytes)",
                len(raw),
            )
        if name in entries:
            raise FormatError(f"duplicate entry {name!r}", offset)
        data = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
        entries[name] = data.reshape(dims)
        offset += need
    if offset != len(raw):
        raise FormatError("trailing bytes after last entry", offset)
    return entries


def load_model(arch_source: str, weight_bundle_path) -> Model:
    """Build a validated Model from architecture text/preset and an SRWB bundle."""
    text = resolve_architecture(arch_source)
    layers, input_shape = parse_architecture(text)
    entries = read_srwb(weight_bundle_path)
    weights = {}
    for spec in layers:
        if not spec.parameterized:
            continue
        wkey, bkey = f"{spec.name}.weight", f"{spec.name}.bias"
        if wkey not in entries:
            raise LoadError(f"bundle is missing {wkey!r} for layer {spec.name!r}")
        if bkey not in entries:
            raise LoadError(f"bundle is missing {bkey!r} for layer {spec.name!r}")
        weights[spec.name] = (entries.pop(wkey), entries.pop(bkey))
    if entries:
        raise LoadError(f"bundle has entries for unknown layers: {sorted(entries)}")
    with open(weight_bundle_path, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()
    return Model(layers, weights, input_shape, arch_text=text, weight_digest=digest)


# --- preprocessing ----------------------------------------------------------


def _resize_frame(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of an (H,W,C) frame, float64 math."""
    from .volume import _interp_axis

    arr = frame.astype(np.float64)
    if arr.shape[0] != out_h:
        arr = _interp_axis(arr, out_h, 0)
    if arr.shape[1] != out_w:
        arr = _interp_axis(arr, out_w, 1)
    return arr


def preprocess_clip(frames, means=(0.0, 0.0, 0.0)) -> ClipTensor:
    """Scale (short side 128), center-crop 112, 16 frames with loop padding,
    subtract per-channel means. Returns a (3,16,112,112) ClipTensor."""
    frames = list(frames)
    if not frames:
        raise InputError("no frames supplied")
    first = np.asarray(frames[0])
    if first.ndim != 3 or first.shape[2] != 3:
        raise InputError(f"frames must be (H,W,3), got {first.shape}")
    if len(means) != 3:
        raise InputError(f"means must have 3 entries, got {len(means)}")
    h, w = first.shape[:2]
    scale = SCALE_SHORT_SIDE / min(h, w)
    out_h = max(SCALE_SHORT_SIDE, int(round(h * scale)))
    out_w = max(SCALE_SHORT_SIDE, int(round(w * scale)))
    top = (out_h - CLIP_SIDE) // 2
    left = (out_w - CLIP_SIDE) // 2
    picked = [frames[i % len(frames)] for i in range(CLIP_FRAMES)]
    out = np.empty((3, CLIP_FRAMES, CLIP_SIDE, CLIP_SIDE), dtype=np.float32)
    mean_arr = np.asarray(means, dtype=np.float64)
    for ti, frame in enumerate(picked):
        arr = np.asarray(frame)
        if arr.shape != first.shape:
            raise InputError(
                f"frame {ti} has shape {arr.shape}, expected {first.shape}"
            )
        resized = _resize_frame(arr, out_h, out_w)
        crop = resized[top : top + CLIP_SIDE, left : left + CLIP_SIDE]
        out[:, ti] = (crop - mean_arr).transpose(2, 0, 1).astype(np.float32)
    return ClipTensor(out)


# --- forward pass -----------------------------------------------------------


def forward(model: Model, clip) -> tuple:
    """Run the model on one clip; returns (logits, ActivationTrace)."""
    x = clip.data if isinstance(clip, ClipTensor) else np.asarray(clip)
    if tuple(x.shape) != model.input_shape:
        raise InputError(
            f"clip shape {tuple(x.shape)} does not match model input {model.input_shape}"
        )
    # float32 is the production dtype; float64 passes through so oracle-style
    # checks (finite differences) can run the same code path at full precision
    if x.dtype != np.float64:
        x = np.ascontiguousarray(x, dtype=np.float32)
    x = np.ascontiguousarray(x)
    trace = ActivationTrace(model_fingerprint=model.fingerprint, clip=x)
    for spec, expect in zip(model.layers, model.shapes):
        argmax = None
        if spec.kind == "conv3d":
            w, b = model.weights[spec.name]
            y = _layers.conv3d_forward(x, w, b, spec.stride, spec.padding)
        elif spec.kind == "relu":
            y = _layers.relu_forward(x)
        elif spec.kind == "maxpool3d":
            y, argmax = _layers.maxpool3d_forward(x, spec.window, spec.stride)
        elif spec.kind == "flatten":
            y = x.reshape(-1)
        elif spec.kind == "gap3d":
            y = _layers.gap3d_forward(x)
        elif spec.kind == "dense":
            w, b = model.weights[spec.name]
            y = _layers.dense_forward(x, w, b)
        else:  # pragma: no cover - parser rejects unknown kinds
            raise LoadError(f"unknown layer kind {spec.kind!r}")
        if tuple(y.shape) != expect:  # pragma: no cover - inference bug guard
            raise LoadError(f"layer {spec.name!r}: got shape {y.shape}, inferred {expect}")
        trace.entries.append(TraceEntry(spec.name, spec.kind, x, y, argmax))
        x = y
    return x, trace
