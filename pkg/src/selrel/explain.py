"""Explanation backends over traced forward passes.

Four baselines: Deep Taylor Decomposition (relevance propagation with the
z+ rule, bounded rule at the pixel layer), 3D GradCAM, Guided
Backpropagation, and their Hadamard combination. All operate on an
ActivationTrace and return a RelevanceVolume in input frame geometry
(channels collapsed by summation).
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import _layers
from .exceptions import InputError
from .net import ActivationTrace, Model, forward
from .volume import Volume3, trilinear_resize

EPSILON = 1e-9  # stabilizer for relevance denominators (dead neurons)

PIXEL_MIN = 0.0
PIXEL_MAX = 255.0

METHODS = ("dtd", "gradcam", "guided_bp", "guided_gradcam")


@dataclass(frozen=True)
class RelevanceVolume:
    """Per-voxel contribution scores in (t,h,w) input geometry."""

    volume: Volume3
    method: str
    class_idx: int
    flag: str | None = None

    @property
    def shape(self):
        return self.volume.shape


@dataclass(frozen=True)
class GradientTensor:
    values: np.ndarray
    layer: str
    relu_mode: str


def _check_trace(model: Model, trace: ActivationTrace, class_idx: int) -> None:
    if trace.model_fingerprint != model.fingerprint:
        raise InputError("trace was produced by a different model")
    if not 0 <= class_idx < model.class_count:
        raise InputError(
            f"class index {class_idx} out of range for {model.class_count} classes"
        )


def backward(
    model: Model,
    trace: ActivationTrace,
    class_idx: int,
    relu_mode: str = "standard",
    upto_layer: str = "input",
) -> GradientTensor:
    """Vector-Jacobian propagation of a one-hot seed at the logits.

    Returns the gradient of the target logit w.r.t. the named layer's
    output, or w.r.t. the model input for ``upto_layer="input"``.
    standard mode gates ReLU on positive forward input; guided mode
    additionally requires positive incoming gradient.
    """
    _check_trace(model, trace, class_idx)
    if relu_mode not in ("standard", "guided"):
        raise InputError(f"unknown relu mode {relu_mode!r}")
    g = np.zeros(model.class_count, dtype=trace.logits.dtype)
    g[class_idx] = 1.0
    for spec, entry in zip(reversed(model.layers), reversed(trace.entries)):
        if spec.name == upto_layer:
            return GradientTensor(g, spec.name, relu_mode)
        if spec.kind == "conv3d":
            w, _ = model.weights[spec.name]
            g = _layers.conv3d_input_grad(g, w, entry.x_in.shape, spec.stride, spec.padding)
        elif spec.kind == "relu":
            g = _layers.relu_backward(g, entry.x_in, guided=(relu_mode == "guided"))
        elif spec.kind == "maxpool3d":
            g = _layers.maxpool3d_route(g, entry.argmax, entry.x_in.shape)
        elif spec.kind == "flatten":
            g = g.reshape(entry.x_in.shape)
        elif spec.kind == "gap3d":
            g = _layers.gap3d_backward(g, entry.x_in.shape)
        elif spec.kind == "dense":
            w, _ = model.weights[spec.name]
            g = w.T @ g
    if upto_layer == "input":
        return GradientTensor(g, "input", relu_mode)
    raise InputError(f"layer {upto_layer!r} not found in model")


# --- Deep Taylor Decomposition ---------------------------------------------


def _input_bounds(channel_means):
    means = np.asarray(channel_means, dtype=np.float64)
    if means.shape != (3,):
        raise InputError(f"channel_means must have 3 entries, got {means.shape}")
    low = PIXEL_MIN - means
    high = PIXEL_MAX - means
    return low, high


def dtd_explain(
    model: Model, trace: ActivationTrace, class_idx: int, channel_means=(0.0, 0.0, 0.0)
) -> RelevanceVolume:
    """Relevance propagation seeded with the target logit.

    z+ rule through hidden layers; the first parameterized layer uses the
    bounded rule with per-channel pixel bounds implied by mean subtraction.
    Positive bias mass is absorbed by the denominators, never redistributed.
    """
    _check_trace(model, trace, class_idx)
    seed = float(trace.logits[class_idx])
    t, h, w = model.input_shape[1:]
    if seed <= 0.0:
        zero = Volume3(np.zeros((t, h, w), dtype=np.float32))
        return RelevanceVolume(zero, "dtd", class_idx, flag="nonpositive-seed")

    low_c, high_c = _input_bounds(channel_means)
    first_param = next(s.name for s in model.layers if s.parameterized)

    r = np.zeros(model.class_count, dtype=np.float64)
    r[class_idx] = seed
    for spec, entry in zip(reversed(model.layers), reversed(trace.entries)):
        x = entry.x_in.astype(np.float64)
        if spec.kind == "relu":
            continue  # relevance passes through; zero activations hold zero mass
        if spec.kind == "flatten":
            r = r.reshape(entry.x_in.shape)
        elif spec.kind == "maxpool3d":
            r = _layers.maxpool3d_route(r, entry.argmax, entry.x_in.shape)
        elif spec.kind == "gap3d":
            n = x[0].size
            z = x.reshape(x.shape[0], -1).mean(axis=1) + EPSILON
            s = r / z
            r = (x / n) * s[:, None, None, None]
        elif spec.kind == "dense":
            wgt, bias = model.weights[spec.name]
            wgt = wgt.astype(np.float64)
            b_pos = np.maximum(bias.astype(np.float64), 0.0)
            if spec.name == first_param:
                r = _dense_bounded(x, r, wgt, b_pos, low_c, high_c, model.input_shape)
            else:
                w_pos = np.maximum(wgt, 0.0)
                z = w_pos @ x + b_pos + EPSILON
                r = x * (w_pos.T @ (r / z))
        elif spec.kind == "conv3d":
            wgt, bias = model.weights[spec.name]
            wgt = wgt.astype(np.float64)
            b_pos = np.maximum(bias.astype(np.float64), 0.0)
            if spec.name == first_param:
                r = _conv_bounded(x, r, wgt, b_pos, low_c, high_c, spec)
            else:
                w_pos = np.maximum(wgt, 0.0)
                z = _layers.conv3d_forward(x, w_pos, b_pos, spec.stride, spec.padding) + EPSILON
                s = r / z
                r = x * _layers.conv3d_input_grad(s, w_pos, x.shape, spec.stride, spec.padding)
    volume = Volume3(r.sum(axis=0).astype(np.float32))
    return RelevanceVolume(volume, "dtd", class_idx)


def _bound_grids(low_c, high_c, shape4):
    low = np.broadcast_to(low_c[:, None, None, None], shape4)
    high = np.broadcast_to(high_c[:, None, None, None], shape4)
    return np.ascontiguousarray(low), np.ascontiguousarray(high)


def _conv_bounded(x, r, wgt, b_pos, low_c, high_c, spec):
    low, high = _bound_grids(low_c, high_c, x.shape)
    w_pos = np.maximum(wgt, 0.0)
    w_neg = np.minimum(wgt, 0.0)
    z = (
        _layers.conv3d_forward(x, wgt, None, spec.stride, spec.padding)
        - _layers.conv3d_forward(low, w_pos, None, spec.stride, spec.padding)
        - _layers.conv3d_forward(high, w_neg, None, spec.stride, spec.padding)
        + b_pos[:, None, None, None]
        + EPSILON
    )
    s = r / z
    c_all = _layers.conv3d_input_grad(s, wgt, x.shape, spec.stride, spec.padding)
    c_pos = _layers.conv3d_input_grad(s, w_pos, x.shape, spec.stride, spec.padding)
    c_neg = _layers.conv3d_input_grad(s, w_neg, x.shape, spec.stride, spec.padding)
    # exact value is a sum of nonnegative terms; guard the rounding of the split
    return np.maximum(x * c_all - low * c_pos - high * c_neg, 0.0)


def _dense_bounded(x, r, wgt, b_pos, low_c, high_c, input_shape):
    low4, high4 = _bound_grids(low_c, high_c, input_shape)
    low = low4.reshape(-1)
    high = high4.reshape(-1)
    if low.size != x.size:
        raise InputError(
            "bounded rule needs the first dense layer to act on the flattened input"
        )
    w_pos = np.maximum(wgt, 0.0)
    w_neg = np.minimum(wgt, 0.0)
    z = wgt @ x - w_pos @ low - w_neg @ high + b_pos + EPSILON
    s = r / z
    return np.maximum(x * (wgt.T @ s) - low * (w_pos.T @ s) - high * (w_neg.T @ s), 0.0)


# --- GradCAM and guided variants --------------------------------------------


def last_conv_layer(model: Model) -> str:
    names = [s.name for s in model.layers if s.kind == "conv3d"]
    if not names:
        raise InputError("model has no convolutional layer")
    return names[-1]


def gradcam_explain(
    model: Model, trace: ActivationTrace, class_idx: int, target_layer: str | None = None
) -> RelevanceVolume:
    """Gradient-weighted activation map at a conv layer, rectified and
    trilinearly upsampled to the input frame geometry."""
    _check_trace(model, trace, class_idx)
    if target_layer is None:
        target_layer = last_conv_layer(model)
    spec = next((s for s in model.layers if s.name == target_layer), None)
    if spec is None:
        raise InputError(f"layer {target_layer!r} not found in model")
    if spec.kind != "conv3d":
        raise InputError(f"GradCAM target {target_layer!r} is not convolutional")
    grad = backward(model, trace, class_idx, "standard", target_layer).values
    activation = trace.entry(target_layer).x_out.astype(np.float64)
    weights = grad.astype(np.float64).mean(axis=(1, 2, 3))
    cam = np.maximum(np.tensordot(weights, activation, axes=([0], [0])), 0.0)
    resized = trilinear_resize(Volume3(cam.astype(np.float32)), model.input_shape[1:])
    return RelevanceVolume(resized, "gradcam", class_idx)


def guided_backprop_explain(model: Model, trace: ActivationTrace, class_idx: int) -> RelevanceVolume:
    """Guided-mode input gradient, channels summed; signed."""
    grad = backward(model, trace, class_idx, "guided", "input").values
    volume = Volume3(grad.astype(np.float64).sum(axis=0).astype(np.float32))
    return RelevanceVolume(volume, "guided_bp", class_idx)


def guided_gradcam_explain(
    model: Model, trace: ActivationTrace, class_idx: int, target_layer: str | None = None
) -> RelevanceVolume:
    """Hadamard product of the resized GradCAM map and Guided Backpropagation."""
    cam = gradcam_explain(model, trace, class_idx, target_layer)
    guided = guided_backprop_explain(model, trace, class_idx)
    product = cam.volume.data.astype(np.float64) * guided.volume.data.astype(np.float64)
    return RelevanceVolume(Volume3(product.astype(np.float32)), "guided_gradcam", class_idx)


# --- estimator-style front ends ---------------------------------------------


class ExplainerBase(BaseEstimator):
    """Common plumbing: run a traced forward pass, delegate to the method."""

    def __init__(self, model=None):
        self.model = model

    def _explain_trace(self, trace, class_idx):  # pragma: no cover - abstract
        raise NotImplementedError

    def explain(self, clip, class_idx: int | None = None) -> RelevanceVolume:
        """Explain one clip; defaults to the argmax class."""
        if self.model is None:
            raise InputError(f"{type(self).__name__} needs a model")
        logits, trace = forward(self.model, clip)
        if class_idx is None:
            class_idx = int(np.argmax(logits))
        return self._explain_trace(trace, int(class_idx))

    def explain_trace(self, trace, class_idx: int) -> RelevanceVolume:
        if self.model is None:
            raise InputError(f"{type(self).__name__} needs a model")
        return self._explain_trace(trace, int(class_idx))


class DeepTaylorDecomposition(ExplainerBase):
    method = "dtd"

    def __init__(self, model=None, channel_means=(0.0, 0.0, 0.0)):
        super().__init__(model)
        self.channel_means = channel_means

    def _explain_trace(self, trace, class_idx):
        return dtd_explain(self.model, trace, class_idx, self.channel_means)


class GradCam(ExplainerBase):
    method = "gradcam"

    def __init__(self, model=None, target_layer=None):
        super().__init__(model)
        self.target_layer = target_layer

    def _explain_trace(self, trace, class_idx):
        return gradcam_explain(self.model, trace, class_idx, self.target_layer)


class GuidedBackprop(ExplainerBase):
    method = "guided_bp"

    def _explain_trace(self, trace, class_idx):
        return guided_backprop_explain(self.model, trace, class_idx)


class GuidedGradCam(ExplainerBase):
    method = "guided_gradcam"

    def __init__(self, model=None, target_layer=None):
        super().__init__(model)
        self.target_layer = target_layer

    def _explain_trace(self, trace, class_idx):
        return guided_gradcam_explain(self.model, trace, class_idx, self.target_layer)


def explainer_for(method: str, model: Model, **kwargs) -> ExplainerBase:
    table = {
        "dtd": DeepTaylorDecomposition,
        "gradcam": GradCam,
        "guided_bp": GuidedBackprop,
        "guided_gradcam": GuidedGradCam,
    }
    if method not in table:
        raise InputError(f"unknown method {method!r}; choose from {sorted(table)}")
    return table[method](model, **kwargs)
