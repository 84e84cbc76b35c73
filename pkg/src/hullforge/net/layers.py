"""3-D convolution, nearest up-sampling and ReLU with their backward passes.

Activations are laid out ``(C, B, X, Y, Z)``: channel-major, then batch, then
the three spatial axes.  Keeping channels outermost turns every convolution
into one ``(Cout, Cin*k^3) @ (Cin*k^3, B*P)`` matrix product per chunk.

Convolutions use "same" padding of ``k // 2`` zeros on every side and sample
output positions at multiples of ``stride``, so each spatial extent becomes
``ceil(D / stride)``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._accel import USE_NUMBA, njit, prange

# Target size of one im2col block.  Blocks this small stay cache-resident
# between the gather and the matrix product, which matters far more than BLAS
# efficiency for the thin channel counts used here.
_COLS_BYTES = 1 << 20


def out_dims(dims, stride):
    return tuple(-(-d // stride) for d in dims)


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


def _blocks(batch, ox, row_bytes):
    """(sample, x0, x1) work blocks in a fixed order; ``row_bytes`` is one x-slab of columns."""
    slab = max(1, min(ox, _COLS_BYTES // max(1, row_bytes)))
    return [(bb, x0, min(ox, x0 + slab)) for bb in range(batch) for x0 in range(0, ox, slab)]


def _windows(xp, k, stride):
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
    return win[:, :, ::stride, ::stride, ::stride]


def _cols(win, bb, x0, x1, od):
    c = win.shape[0]
    k = win.shape[-1]
    blk = win[:, bb, x0:x1, : od[1], : od[2]]
    return blk.transpose(0, 4, 5, 6, 1, 2, 3).reshape(c * k * k * k, (x1 - x0) * od[1] * od[2])


@njit(parallel=True, cache=True, nogil=True)
def _direct_forward(xp, w, b, out):
    # stride-1 direct convolution; faster than im2col when Cout is tiny
    cout, cin, k = w.shape[0], w.shape[1], w.shape[2]
    batch, ox, oy, oz = out.shape[1], out.shape[2], out.shape[3], out.shape[4]
    for t in prange(batch * ox):
        bb = t // ox
        x = t % ox
        acc = np.empty(oz, dtype=out.dtype)
        for co in range(cout):
            for y in range(oy):
                for z in range(oz):
                    acc[z] = b[co]
                for ci in range(cin):
                    for i in range(k):
                        for j in range(k):
                            row = xp[ci, bb, x + i, y + j]
                            for l in range(k):
                                wv = w[co, ci, i, j, l]
                                for z in range(oz):
                                    acc[z] += wv * row[z + l]
                for z in range(oz):
                    out[co, bb, x, y, z] = acc[z]


@njit(parallel=True, cache=True, nogil=True)
def _direct_dw(xp, dout, dw):
    cout, cin, k = dw.shape[0], dw.shape[1], dw.shape[2]
    batch, ox, oy, oz = dout.shape[1], dout.shape[2], dout.shape[3], dout.shape[4]
    for t in prange(cout * cin):
        co = t // cin
        ci = t % cin
        for i in range(k):
            for j in range(k):
                for l in range(k):
                    s = 0.0
                    for bb in range(batch):
                        for x in range(ox):
                            for y in range(oy):
                                row = xp[ci, bb, x + i, y + j]
                                drow = dout[co, bb, x, y]
                                for z in range(oz):
                                    s += drow[z] * row[z + l]
                    dw[co, ci, i, j, l] = s


def _use_direct(cout, stride):
    return USE_NUMBA and stride == 1 and cout == 1


def _check(x, w, b):
    if x.ndim != 5:
        raise ValueError(f"expected activations (C, B, X, Y, Z), got shape {x.shape}")
    if w.ndim != 5 or w.shape[2] != w.shape[3] or w.shape[3] != w.shape[4] or w.shape[2] % 2 == 0:
        raise ValueError(f"kernel must be (Cout, Cin, k, k, k) with odd k, got {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"channel mismatch: input has {x.shape[0]}, kernel expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match {w.shape[0]} output channels")
    if min(x.shape[2:]) < 1:
        raise ValueError("empty spatial extent")


def conv3d_forward(x, w, b, stride=1):
    """Same-padded strided 3-D cross-correlation.

    Accepts ``(C, X, Y, Z)`` or batched ``(C, B, X, Y, Z)`` input and returns
    the matching layout.
    """
    single = x.ndim == 4
    if single:
        x = x[:, None]
    _check(x, w, b)
    cout, cin, k = w.shape[:3]
    batch = x.shape[1]
    od = out_dims(x.shape[2:], stride)
    dtype = np.result_type(x, w)
    win = _windows(_pad(x.astype(dtype, copy=False), k // 2), k, stride)
    w2 = w.reshape(cout, -1).astype(dtype, copy=False)
    bias = b.astype(dtype, copy=False)[:, None]
    out = np.empty((cout, batch) + od, dtype=dtype)
    if _use_direct(cout, stride):
        _direct_forward(_pad(x.astype(dtype, copy=False), k // 2), w.astype(dtype, copy=False), b.astype(dtype), out)
        return out[:, 0] if single else out
    row = cin * k**3 * od[1] * od[2] * dtype.itemsize
    for bb, x0, x1 in _blocks(batch, od[0], row):
        y = w2 @ _cols(win, bb, x0, x1, od)
        y += bias
        out[:, bb, x0:x1] = y.reshape((cout, x1 - x0) + od[1:])
    return out[:, 0] if single else out


def conv3d_backward(dout, x, w, stride=1):
    """Gradients ``(dx, dw, db)`` of :func:`conv3d_forward` for upstream ``dout``."""
    cout, cin, k = w.shape[:3]
    p = k // 2
    batch = x.shape[1]
    od = dout.shape[2:]
    dtype = np.result_type(x, w, dout)
    xp = _pad(x.astype(dtype, copy=False), p)
    db = dout.sum(axis=(1, 2, 3, 4))
    if _use_direct(cout, stride):
        w = w.astype(dtype, copy=False)
        dout = dout.astype(dtype, copy=False)
        dw = np.empty(w.shape, dtype=dtype)
        _direct_dw(xp, dout, dw)
        # input gradient of a stride-1 same conv is a same conv with the flipped, transposed kernel
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
        dx = np.empty(x.shape, dtype=dtype)
        _direct_forward(_pad(dout, p), wf, np.zeros(cin, dtype=dtype), dx)
        return dx, dw, db
    win = _windows(xp, k, stride)
    w2t = np.ascontiguousarray(w.reshape(cout, -1).astype(dtype, copy=False).T)
    dw2 = np.zeros((cout, cin * k**3), dtype=dtype)
    dxp = np.zeros(xp.shape, dtype=dtype)
    hy = stride * (od[1] - 1) + 1
    hz = stride * (od[2] - 1) + 1
    row = cin * k**3 * od[1] * od[2] * dtype.itemsize
    for bb, x0, x1 in _blocks(batch, od[0], row):
        nx = x1 - x0
        d2 = dout[:, bb, x0:x1].reshape(cout, -1)
        dw2 += d2 @ _cols(win, bb, x0, x1, od).T
        dcols = (w2t @ d2).reshape((cin, k, k, k, nx) + tuple(od[1:]))
        tgt = dxp[:, bb]
        hx = stride * (nx - 1) + 1
        for i in range(k):
            xs = x0 * stride + i
            for j in range(k):
                for l in range(k):
                    tgt[:, xs : xs + hx : stride, j : j + hy : stride, l : l + hz : stride] += dcols[:, i, j, l]
    dx = dxp[:, :, p:-p, p:-p, p:-p] if p else dxp
    return np.ascontiguousarray(dx), dw2.reshape(w.shape), db


def upsample2(x):
    """Nearest-neighbour x2 along the three spatial axes."""
    return x.repeat(2, axis=2).repeat(2, axis=3).repeat(2, axis=4)


def upsample2_backward(dout):
    c, b, x, y, z = dout.shape
    return dout.reshape(c, b, x // 2, 2, y // 2, 2, z // 2, 2).sum(axis=(3, 5, 7))


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, pre):
    return np.where(pre > 0, dout, 0).astype(dout.dtype, copy=False)
