"""Layer-level numerics for the 3D-CNN engine.

Activations are (channels, t, h, w) float arrays. Convolution is
cross-correlation (no kernel flip). Everything here is deterministic:
plain numpy slicing plus BLAS matmuls, no data-dependent branching.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv3d_out_shape(in_shape, kernel, stride, padding):
    c, t, h, w = in_shape
    kt, kh, kw = kernel
    st, sh, sw = stride
    pt, ph, pw = padding
    to = (t + 2 * pt - kt) // st + 1
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    return to, ho, wo


def conv3d_forward(x, weight, bias, stride, padding):
    """x: (Cin,T,H,W); weight: (Cout,Cin,kt,kh,kw); returns (Cout,To,Ho,Wo).

    im2col one temporal output slab at a time to bound the scratch buffer.
    """
    cout, cin, kt, kh, kw = weight.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    to, ho, wo = conv3d_out_shape(x.shape, (kt, kh, kw), stride, padding)
    xp = np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw)))
    wmat = weight.reshape(cout, -1)
    out = np.empty((cout, to, ho, wo), dtype=x.dtype)
    for ti in range(to):
        slab = xp[:, ti * st : ti * st + kt]  # (Cin,kt,Hp,Wp)
        win = sliding_window_view(slab, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        # -> rows ordered (ho,wo), columns ordered (Cin,kt,kh,kw) to match wmat
        cols = win.transpose(2, 3, 0, 1, 4, 5).reshape(ho * wo, cin * kt * kh * kw)
        out[:, ti] = (cols @ wmat.T).T.reshape(cout, ho, wo)
    if bias is not None:
        out += bias[:, None, None, None]
    return out


def conv3d_input_grad(g_out, weight, in_shape, stride, padding):
    """Vector-Jacobian product w.r.t. the conv input.

    g_out: (Cout,To,Ho,Wo). Scatters one kernel offset at a time; overlapping
    writes accumulate sequentially so the result is deterministic.
    """
    cout, cin, kt, kh, kw = weight.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    c, t, h, w = in_shape
    to, ho, wo = g_out.shape[1:]
    gp = np.zeros((cin, t + 2 * pt, h + 2 * ph, w + 2 * pw), dtype=g_out.dtype)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                # (Cin,Cout) x (Cout,To*Ho*Wo) -> (Cin,To,Ho,Wo)
                contrib = np.tensordot(weight[:, :, dt, dh, dw], g_out, axes=([0], [0]))
                gp[
                    :,
                    dt : dt + to * st : st,
                    dh : dh + ho * sh : sh,
                    dw : dw + wo * sw : sw,
                ] += contrib
    return gp[:, pt : pt + t, ph : ph + h, pw : pw + w]


def maxpool3d_forward(x, window, stride):
    """Returns (out, argmax) where argmax holds flat indices into x[c]."""
    c, t, h, w = x.shape
    pt, ph, pw = window
    st, sh, sw = stride
    to = (t - pt) // st + 1
    ho = (h - ph) // sh + 1
    wo = (w - pw) // sw + 1
    win = sliding_window_view(x, (pt, ph, pw), axis=(1, 2, 3))[:, ::st, ::sh, ::sw]
    flat = win.reshape(c, to, ho, wo, pt * ph * pw)
    local = flat.argmax(axis=-1)  # ties -> first in row-major window order
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    # local window coordinates -> absolute flat index into (t,h,w)
    lt, rem = np.divmod(local, ph * pw)
    lh, lw = np.divmod(rem, pw)
    ti, hi, wi = np.meshgrid(
        np.arange(to) * st, np.arange(ho) * sh, np.arange(wo) * sw, indexing="ij"
    )
    absolute = ((ti + lt) * h + (hi + lh)) * w + (wi + lw)
    return np.ascontiguousarray(out), absolute


def maxpool3d_route(g_out, argmax, in_shape):
    """Scatter g_out back to the traced argmax positions (winner takes all)."""
    c = in_shape[0]
    g_in = np.zeros((c, in_shape[1] * in_shape[2] * in_shape[3]), dtype=g_out.dtype)
    flat_g = g_out.reshape(c, -1)
    flat_idx = argmax.reshape(c, -1)
    for ci in range(c):  # overlapping windows may hit one source voxel twice
        np.add.at(g_in[ci], flat_idx[ci], flat_g[ci])
    return g_in.reshape(in_shape)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(g_out, x_in, guided: bool):
    gate = x_in > 0
    if guided:
        gate = gate & (g_out > 0)
    return np.where(gate, g_out, 0)


def dense_forward(x, weight, bias):
    out = weight @ x
    if bias is not None:
        out = out + bias
    return out


def gap3d_forward(x):
    c = x.shape[0]
    return x.reshape(c, -1).mean(axis=1)


def gap3d_backward(g_out, in_shape):
    n = in_shape[1] * in_shape[2] * in_shape[3]
    g = np.broadcast_to((g_out / n)[:, None, None, None], in_shape)
    return np.ascontiguousarray(g)
