import numpy as np
import pytest

from selrel.volume import Volume3, sobel_kernel


def brute_sobel(data: np.ndarray, axis: str) -> np.ndarray:
    """Independent 27-tap cross-correlation: float64 accumulation over the
    replicate-padded neighborhood, cast to float32 at the end."""
    kernel = sobel_kernel(axis)
    padded = np.pad(data, 1, mode="edge").astype(np.float64)
    t, h, w = data.shape
    out = np.zeros((t, h, w), dtype=np.float64)
    for a in range(t):
        for b in range(h):
            for c in range(w):
                acc = 0.0
                for dt in range(3):
                    for dh in range(3):
                        for dw in range(3):
                            acc += kernel[dt, dh, dw] * padded[a + dt, b + dh, c + dw]
                out[a, b, c] = acc
    return out.astype(np.float32)


def naive_forward(model, clip: np.ndarray) -> np.ndarray:
    """Nested-loop reference inference, float64 throughout."""
    x = np.asarray(clip, dtype=np.float64)
    for spec in model.layers:
        if spec.kind == "conv3d":
            w, b = model.weights[spec.name]
            x = _naive_conv3d(x, w.astype(np.float64), b.astype(np.float64), spec.stride, spec.padding)
        elif spec.kind == "relu":
            x = np.maximum(x, 0)
        elif spec.kind == "maxpool3d":
            x = _naive_pool(x, spec.window, spec.stride)
        elif spec.kind == "flatten":
            x = x.reshape(-1)
        elif spec.kind == "gap3d":
            x = x.reshape(x.shape[0], -1).mean(axis=1)
        elif spec.kind == "dense":
            w, b = model.weights[spec.name]
            x = w.astype(np.float64) @ x + b.astype(np.float64)
    return x


def _naive_conv3d(x, w, b, stride, pad):
    cout, cin, kt, kh, kw = w.shape
    st, sh, sw = stride
    xp = np.pad(x, ((0, 0), (pad[0], pad[0]), (pad[1], pad[1]), (pad[2], pad[2])))
    to = (x.shape[1] + 2 * pad[0] - kt) // st + 1
    ho = (x.shape[2] + 2 * pad[1] - kh) // sh + 1
    wo = (x.shape[3] + 2 * pad[2] - kw) // sw + 1
    out = np.zeros((cout, to, ho, wo))
    for co in range(cout):
        for t in range(to):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[:, t * st : t * st + kt, i * sh : i * sh + kh, j * sw : j * sw + kw]
                    out[co, t, i, j] = np.sum(w[co] * patch) + b[co]
    return out


def _naive_pool(x, window, stride):
    c, t, h, w = x.shape
    pt, ph, pw = window
    st, sh, sw = stride
    to, ho, wo = (t - pt) // st + 1, (h - ph) // sh + 1, (w - pw) // sw + 1
    out = np.zeros((c, to, ho, wo))
    for ci in range(c):
        for a in range(to):
            for i in range(ho):
                for j in range(wo):
                    out[ci, a, i, j] = x[
                        ci, a * st : a * st + pt, i * sh : i * sh + ph, j * sw : j * sw + pw
                    ].max()
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_volume(rng):
    def make(dims=(4, 6, 5), scale=1.0, seed=None):
        gen = rng if seed is None else np.random.default_rng(seed)
        return Volume3((gen.normal(size=dims) * scale).astype(np.float32))

    return make
