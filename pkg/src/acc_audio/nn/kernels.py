"""Compiled inner loops for 3x3 convolution and 3x3/stride-2 max pooling.

All arrays are channels-first (batch, channels, rows, cols).
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def conv3x3(xp, weight, bias, out):
    """out[b, o] = bias[o] + sum_{c,i,j} weight[o, c, i, j] * xp[b, c, y+i, x+j].

    ``xp`` is the input already zero-padded by one cell on each side.
    """
    nb, nc, hp, wp = xp.shape
    no = weight.shape[0]
    h = hp - 2
    w = wp - 2
    for b in range(nb):
        for y in range(h):
            for o in range(no):
                acc = out[b, o, y]
                for x in range(w):
                    acc[x] = bias[o]
            for c in range(nc):
                for i in range(3):
                    row = xp[b, c, y + i]
                    for o in range(no):
                        acc = out[b, o, y]
                        w0 = weight[o, c, i, 0]
                        w1 = weight[o, c, i, 1]
                        w2 = weight[o, c, i, 2]
                        for x in range(w):
                            acc[x] += w0 * row[x] + w1 * row[x + 1] + w2 * row[x + 2]


@njit(cache=True)
def maxpool3x3s2(xp, out, arg):
    """Max over 3x3 windows at stride 2; ``arg`` records the winning cell (0..8).

    ``xp`` is padded with -inf as required; the first maximum wins ties.
    """
    nb, nc, _, _ = xp.shape
    oh, ow = out.shape[2], out.shape[3]
    for b in range(nb):
        for c in range(nc):
            for y in range(oh):
                for x in range(ow):
                    best = xp[b, c, 2 * y, 2 * x]
                    k = 0
                    for i in range(3):
                        for j in range(3):
                            v = xp[b, c, 2 * y + i, 2 * x + j]
                            if v > best:
                                best = v
                                k = 3 * i + j
                    out[b, c, y, x] = best
                    arg[b, c, y, x] = k


@njit(cache=True)
def maxpool3x3s2_grad(dy, arg, dxp):
    nb, nc, oh, ow = dy.shape
    for b in range(nb):
        for c in range(nc):
            for y in range(oh):
                for x in range(ow):
                    k = arg[b, c, y, x]
                    dxp[b, c, 2 * y + k // 3, 2 * x + k % 3] += dy[b, c, y, x]


def flip_for_input_grad(weight: np.ndarray) -> np.ndarray:
    """Weights turning the input gradient into a forward correlation of the padded output gradient."""
    return np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
