"""Brute-force reference implementations and a finite-difference checker.

Everything here is written as plain loops over the defining sums so the
fast vectorized paths in the package are checked against independent
arithmetic, not against themselves.
"""

from __future__ import annotations

import numpy as np


def conv2d_loops(x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    b, c_in, h, w = x.shape
    c_out, _, k, _ = kernel.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    out = np.zeros((b, c_out, out_h, out_w))
    for bi in range(b):
        for co in range(c_out):
            for oi in range(out_h):
                for oj in range(out_w):
                    acc = 0.0
                    for ci in range(c_in):
                        for di in range(k):
                            for dj in range(k):
                                acc += (
                                    kernel[co, ci, di, dj]
                                    * xp[bi, ci, oi * stride + di, oj * stride + dj]
                                )
                    out[bi, co, oi, oj] = acc
    return out


def conv1d_loops(x: np.ndarray, kernel: np.ndarray, padding_right: int | None = None) -> np.ndarray:
    c_in, length = x.shape
    c_out, _, ksize = kernel.shape
    if padding_right is None:
        padding_right = ksize - 1
    xp = np.pad(x, ((0, 0), (0, padding_right)))
    out = np.zeros((c_out, length))
    for i in range(c_out):
        for j in range(length):
            acc = 0.0
            for n in range(c_in):
                for m in range(ksize):
                    if j + m < xp.shape[1]:
                        acc += kernel[i, n, m] * xp[n, j + m]
            out[i, j] = acc
    return out


def pool2d_loops(x: np.ndarray, kind: str, k: int) -> np.ndarray:
    *lead, h, w = x.shape
    flat = x.reshape(-1, h, w)
    out = np.zeros((flat.shape[0], h // k, w // k))
    for n in range(flat.shape[0]):
        for i in range(h // k):
            for j in range(w // k):
                window = flat[n, i * k : (i + 1) * k, j * k : (j + 1) * k]
                out[n, i, j] = window.max() if kind == "max" else window.mean()
    return out.reshape(*lead, h // k, w // k)


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, m = a.shape
    _, p = b.shape
    out = np.zeros((n, p))
    for i in range(n):
        for j in range(p):
            for kk in range(m):
                out[i, j] += a[i, kk] * b[kk, j]
    return out


def squeeze_loops(x: np.ndarray) -> np.ndarray:
    """Spatial mean per (channel, step): (T, C, H, W) -> (C, T)."""
    t_steps, channels, h, w = x.shape
    out = np.zeros((channels, t_steps))
    for c in range(channels):
        for t in range(t_steps):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[t, c, i, j]
            out[c, t] = acc / (h * w)
    return out


def tla_loops(z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Direct time-axis attention sum: out[i,j] = sum_n sum_m w[i,n,m] z[n,j+m]."""
    channels, t_steps = z.shape
    k = w.shape[2]
    out = np.zeros((channels, t_steps))
    for i in range(channels):
        for j in range(t_steps):
            acc = 0.0
            for n in range(channels):
                for m in range(k):
                    if j + m < t_steps:
                        acc += w[i, n, m] * z[n, j + m]
            out[i, j] = acc
    return out


def cla_loops(z: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Direct channel-axis attention sum: out[i,j] = sum_n sum_m e[j,n,m] z[i+m,n]."""
    channels, t_steps = z.shape
    k = e.shape[2]
    out = np.zeros((channels, t_steps))
    for i in range(channels):
        for j in range(t_steps):
            acc = 0.0
            for n in range(t_steps):
                for m in range(k):
                    if i + m < channels:
                        acc += e[j, n, m] * z[i + m, n]
            out[i, j] = acc
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def ccf_loops(t_map: np.ndarray, c_map: np.ndarray, fusion: str = "multiply") -> np.ndarray:
    pre = t_map * c_map if fusion == "multiply" else t_map + c_map
    return sigmoid(pre)


def recalibrate_loops(x: np.ndarray, f_map: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    t_steps, channels, h, w = x.shape
    for t in range(t_steps):
        for c in range(channels):
            for i in range(h):
                for j in range(w):
                    out[t, c, i, j] = x[t, c, i, j] * f_map[c, t]
    return out


def tcja_forward_loops(
    x: np.ndarray, w: np.ndarray, e: np.ndarray, fusion: str = "multiply"
) -> np.ndarray:
    z = squeeze_loops(x)
    return recalibrate_loops(x, ccf_loops(tla_loops(z, w), cla_loops(z, e), fusion))


def lif_trace_loops(
    inputs: np.ndarray,
    tau: float = 2.0,
    v_reset: float = 0.0,
    v_threshold: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scripted membrane recurrence; returns (V, S, H) trajectories."""
    t_steps = inputs.shape[0]
    v = np.zeros_like(inputs)
    s = np.zeros_like(inputs)
    h = np.zeros_like(inputs)
    h_prev = np.full(inputs.shape[1:], v_reset, dtype=inputs.dtype)
    for t in range(t_steps):
        v[t] = h_prev + (inputs[t] - (h_prev - v_reset)) / tau
        s[t] = (v[t] >= v_threshold).astype(inputs.dtype)
        h[t] = v[t] * (1.0 - s[t])
        h_prev = h[t]
    return v, s, h


def smse_loops(outputs: np.ndarray, target: np.ndarray) -> float:
    t_steps, n_classes = outputs.shape
    total = 0.0
    for t in range(t_steps):
        step = 0.0
        for i in range(n_classes):
            step += (outputs[t, i] - target[i]) ** 2
        total += step / n_classes
    return total / t_steps


def finite_difference_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a dense array."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        f_plus = f(x)
        xf[i] = orig - step
        f_minus = f(x)
        xf[i] = orig
        flat[i] = (f_plus - f_minus) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom
