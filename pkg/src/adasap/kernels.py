"""Hot numeric kernels: direct 2-D convolution and 2-D max pooling.

Two interchangeable backends share one contract:

* ``numba`` (default) -- @njit direct loop nests over a zero-padded buffer,
  innermost loops contiguous so LLVM can vectorise them.
* ``numpy`` -- strided window views folded into BLAS matmuls, selected with
  ``ADASAP_NUMBA=0`` in the environment or used automatically when numba is
  not importable.

``BACKEND`` names the active backend. Both backends are individually
deterministic (fixed sequential reduction order, no threading); they may
differ from each other in the last float ulp because their summation orders
differ. ``benchmarks/bench_kernels.py`` compares them.

Layout is NCHW throughout.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("ADASAP_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "off", "no")

if _want_numba:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - depends on environment
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False

BACKEND = "numba" if NUMBA_ENABLED else "numpy"


def conv2d_output_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int):
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    return oh, ow


def _pad_hw(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _window_view(xp, oh, ow, kh, kw, stride):
    """(B, C, OH, OW, KH, KW) read-only view over the padded input."""
    sb, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(xp.shape[0], xp.shape[1], oh, ow, kh, kw),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def conv2d_forward_numpy(x, w, b, stride=1, padding=0):
    bsz, cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    oh, ow = conv2d_output_hw(h, wid, kh, kw, stride, padding)
    xp = _pad_hw(x, padding)
    cols = _window_view(xp, oh, ow, kh, kw, stride)
    # (B, OH, OW, C*KH*KW) @ (C*KH*KW, O)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(
        bsz * oh * ow, cin * kh * kw
    )
    out = cols @ w.reshape(cout, -1).T + b
    return np.ascontiguousarray(out.reshape(bsz, oh, ow, cout).transpose(0, 3, 1, 2))


def conv2d_backward_numpy(x, w, grad_out, stride=1, padding=0):
    bsz, cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    oh, ow = grad_out.shape[2], grad_out.shape[3]
    xp = _pad_hw(x, padding)
    cols = _window_view(xp, oh, ow, kh, kw, stride)
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(
        bsz * oh * ow, cin * kh * kw
    )
    go = np.ascontiguousarray(grad_out.transpose(0, 2, 3, 1)).reshape(bsz * oh * ow, cout)
    gw = (go.T @ cols).reshape(cout, cin, kh, kw)
    gb = go.sum(axis=0)
    gcols = (go @ w.reshape(cout, -1)).reshape(bsz, oh, ow, cin, kh, kw)
    gxp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride] += (
                gcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
            )
    if padding:
        gx = gxp[:, :, padding : padding + h, padding : padding + wid]
    else:
        gx = gxp
    return np.ascontiguousarray(gx), gw, gb


def maxpool2d_forward_numpy(x, kernel, stride):
    bsz, c, h, w = x.shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    windows = _window_view(x, oh, ow, kernel, kernel, stride)
    flat = windows.reshape(bsz, c, oh, ow, kernel * kernel)
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    # convert the in-window argmax to a flat index into the HxW plane
    ii = np.arange(oh).reshape(1, 1, oh, 1) * stride + local // kernel
    jj = np.arange(ow).reshape(1, 1, 1, ow) * stride + local % kernel
    arg = (ii * w + jj).astype(np.int64)
    return np.ascontiguousarray(out), arg


def maxpool2d_backward_numpy(grad_out, arg, h, w):
    bsz, c, oh, ow = grad_out.shape
    gx = np.zeros((bsz, c, h * w), dtype=grad_out.dtype)
    bi = np.arange(bsz).reshape(bsz, 1, 1, 1)
    ci = np.arange(c).reshape(1, c, 1, 1)
    np.add.at(gx, (bi, ci, arg), grad_out)
    return gx.reshape(bsz, c, h, w)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:

    # Weights pass through these kernels transposed to (cin, kh, kw, cout) so
    # the innermost loops run over the contiguous output-channel axis and
    # vectorise.

    @njit(cache=True)
    def _conv2d_fwd_jit(xp, wt, b, stride, out):
        bsz = xp.shape[0]
        cin = xp.shape[1]
        kh, kw, cout = wt.shape[1], wt.shape[2], wt.shape[3]
        oh = out.shape[2]
        ow = out.shape[3]
        acc = np.empty(cout, dtype=xp.dtype)
        for n in range(bsz):
            for i in range(oh):
                for j in range(ow):
                    for o in range(cout):
                        acc[o] = b[o]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                xv = xp[n, c, i * stride + u, j * stride + v]
                                wv = wt[c, u, v]
                                for o in range(cout):
                                    acc[o] += xv * wv[o]
                    for o in range(cout):
                        out[n, o, i, j] = acc[o]

    @njit(cache=True)
    def _conv2d_bwd_jit(xp, wt, grad_out, stride, gxp, gwt, gb):
        bsz = xp.shape[0]
        cin = xp.shape[1]
        kh, kw, cout = gwt.shape[1], gwt.shape[2], gwt.shape[3]
        oh = grad_out.shape[2]
        ow = grad_out.shape[3]
        gvec = np.empty(cout, dtype=xp.dtype)
        for n in range(bsz):
            for i in range(oh):
                for j in range(ow):
                    for o in range(cout):
                        gvec[o] = grad_out[n, o, i, j]
                        gb[o] += gvec[o]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                xv = xp[n, c, i * stride + u, j * stride + v]
                                wv = wt[c, u, v]
                                gw = gwt[c, u, v]
                                s = 0.0
                                for o in range(cout):
                                    s += gvec[o] * wv[o]
                                for o in range(cout):
                                    gw[o] += gvec[o] * xv
                                gxp[n, c, i * stride + u, j * stride + v] += s

    @njit(cache=True)
    def _maxpool2d_fwd_jit(x, kernel, stride, out, arg):
        bsz, c, h, w = x.shape
        oh = out.shape[2]
        ow = out.shape[3]
        for n in range(bsz):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        best = x[n, ch, i * stride, j * stride]
                        bu = 0
                        bv = 0
                        for u in range(kernel):
                            for v in range(kernel):
                                val = x[n, ch, i * stride + u, j * stride + v]
                                if val > best:
                                    best = val
                                    bu = u
                                    bv = v
                        out[n, ch, i, j] = best
                        arg[n, ch, i, j] = (i * stride + bu) * w + (j * stride + bv)

    @njit(cache=True)
    def _maxpool2d_bwd_jit(grad_out, arg, gx_flat):
        bsz, c, oh, ow = grad_out.shape
        for n in range(bsz):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        gx_flat[n, ch, arg[n, ch, i, j]] += grad_out[n, ch, i, j]

    def conv2d_forward_numba(x, w, b, stride=1, padding=0):
        oh, ow = conv2d_output_hw(x.shape[2], x.shape[3], w.shape[2], w.shape[3], stride, padding)
        xp = np.ascontiguousarray(_pad_hw(x, padding))
        wt = np.ascontiguousarray(w.transpose(1, 2, 3, 0))
        out = np.empty((x.shape[0], w.shape[0], oh, ow), dtype=x.dtype)
        _conv2d_fwd_jit(xp, wt, b, stride, out)
        return out

    def conv2d_backward_numba(x, w, grad_out, stride=1, padding=0):
        h, wid = x.shape[2], x.shape[3]
        xp = np.ascontiguousarray(_pad_hw(x, padding))
        wt = np.ascontiguousarray(w.transpose(1, 2, 3, 0))
        gxp = np.zeros_like(xp)
        gwt = np.zeros_like(wt)
        gb = np.zeros(w.shape[0], dtype=w.dtype)
        _conv2d_bwd_jit(xp, wt, np.ascontiguousarray(grad_out), stride, gxp, gwt, gb)
        gw = np.ascontiguousarray(gwt.transpose(3, 0, 1, 2))
        if padding:
            gx = np.ascontiguousarray(gxp[:, :, padding : padding + h, padding : padding + wid])
        else:
            gx = gxp
        return gx, gw, gb

    def maxpool2d_forward_numba(x, kernel, stride):
        oh = (x.shape[2] - kernel) // stride + 1
        ow = (x.shape[3] - kernel) // stride + 1
        out = np.empty((x.shape[0], x.shape[1], oh, ow), dtype=x.dtype)
        arg = np.empty((x.shape[0], x.shape[1], oh, ow), dtype=np.int64)
        _maxpool2d_fwd_jit(np.ascontiguousarray(x), kernel, stride, out, arg)
        return out, arg

    def maxpool2d_backward_numba(grad_out, arg, h, w):
        gx = np.zeros((grad_out.shape[0], grad_out.shape[1], h * w), dtype=grad_out.dtype)
        _maxpool2d_bwd_jit(np.ascontiguousarray(grad_out), arg, gx)
        return gx.reshape(grad_out.shape[0], grad_out.shape[1], h, w)


if NUMBA_ENABLED:
    conv2d_forward = conv2d_forward_numba
    conv2d_backward = conv2d_backward_numba
    maxpool2d_forward = maxpool2d_forward_numba
    maxpool2d_backward = maxpool2d_backward_numba
else:
    conv2d_forward = conv2d_forward_numpy
    conv2d_backward = conv2d_backward_numpy
    maxpool2d_forward = maxpool2d_forward_numpy
    maxpool2d_backward = maxpool2d_backward_numpy
