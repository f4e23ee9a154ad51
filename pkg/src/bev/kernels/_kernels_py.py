"""Pure numpy implementations of the hot kernels.

These define the reference semantics; ``_kernels_cy.pyx`` must agree with them
(bit-for-bit for splatting and peak finding, to rounding for the loss).
"""
import numpy as np


def gaussian_splat_max(out, center, sigma):
    """Merge a separable Gaussian bump into ``out`` (D, H, W) by elementwise max.

    ``center`` is the (d, h, w) cell the kernel is centred on; the value there is 1.
    """
    D, H, W = out.shape
    inv = 1.0 / (2.0 * sigma * sigma)
    gd = np.exp(-((np.arange(D) - center[0]) ** 2) * inv)
    gh = np.exp(-((np.arange(H) - center[1]) ** 2) * inv)
    gw = np.exp(-((np.arange(W) - center[2]) ** 2) * inv)
    bump = (gd[:, None, None] * gh[None, :, None]) * gw[None, None, :]
    np.maximum(out, bump, out=out)
    return out


def local_maxima_3d(volume, threshold):
    """Strict 26-neighbourhood maxima with value >= threshold.

    Returns (indices (n, 3) int64 in C order, values (n,)).
    """
    vol = np.ascontiguousarray(volume, dtype=np.float64)
    padded = np.pad(vol, 1, mode="constant", constant_values=-np.inf)
    D, H, W = vol.shape
    mask = vol >= threshold
    for dd in (-1, 0, 1):
        for dh in (-1, 0, 1):
            for dw in (-1, 0, 1):
                if dd == 0 and dh == 0 and dw == 0:
                    continue
                nb = padded[1 + dd:1 + dd + D, 1 + dh:1 + dh + H, 1 + dw:1 + dw + W]
                mask &= vol > nb
    idx = np.argwhere(mask).astype(np.int64)
    return idx, vol[mask]


def depth_layer_loss_batch(d_i, d_j, r_i, r_j, gamma):
    """Vectorised piece-wise depth-layer loss and its gradient w.r.t. (d_i, d_j)."""
    d_i = np.asarray(d_i, dtype=np.float64)
    d_j = np.asarray(d_j, dtype=np.float64)
    r_i = np.asarray(r_i, dtype=np.int64)
    r_j = np.asarray(r_j, dtype=np.int64)
    d_i, d_j, r_i, r_j = np.broadcast_arrays(d_i, d_j, r_i, r_j)
    diff = d_i - d_j
    margin = gamma * (r_i - r_j).astype(np.float64)
    loss = np.zeros(diff.shape)
    g_i = np.zeros(diff.shape)

    same = r_i == r_j
    loss[same] = diff[same] ** 2
    g_i[same] = 2.0 * diff[same]

    near = (r_i < r_j) & ((diff - margin) > 0)
    loss[near] = np.logaddexp(0.0, diff[near])
    g_i[near] = 1.0 / (1.0 + np.exp(-diff[near]))

    far = (r_i > r_j) & ((margin - diff) > 0)
    loss[far] = np.logaddexp(0.0, -diff[far])
    g_i[far] = -1.0 / (1.0 + np.exp(diff[far]))

    return loss, g_i, -g_i
