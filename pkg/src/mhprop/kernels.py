"""Sequential inner loops: accept/reject scans, autocorrelation sums, pair sums.

Each kernel has a numba-compiled path and a fallback with identical results:
the scans fall back to their own uncompiled source, the sums to vectorized
numpy. ``MHPROP_DISABLE_NUMBA=1`` forces the fallbacks.
"""
import numpy as np

from ._accel import NUMBA_AVAILABLE, jit_or


# ----------------------------------------------------------------- IMH accept scan


@jit_or()
def imh_scan(log_w, log_w0, log_u):
    """Accept/reject pass of independent MH over pre-drawn proposals.

    ``log_w[t]`` is log p(x'_t) - log q(x'_t) for proposal t, ``log_w0`` the
    same quantity at the initial state. Returns the index of the state held
    after each step (-1 = initial state), acceptance flags, log MH ratios and
    the number of non-finite ratios (which are rejected).
    """
    n = log_w.shape[0]
    idx = np.empty(n, dtype=np.int64)
    accepted = np.zeros(n, dtype=np.bool_)
    log_ratio = np.empty(n)
    cur = -1
    lw_cur = log_w0
    bad = 0
    for t in range(n):
        lr = log_w[t] - lw_cur
        log_ratio[t] = lr
        if not np.isfinite(lr):
            bad += 1
        elif log_u[t] < min(0.0, lr):
            cur = t
            lw_cur = log_w[t]
            accepted[t] = True
        idx[t] = cur
    return idx, accepted, log_ratio, bad


# ----------------------------------------------------------------- buffer repeat cap


@jit_or()
def repeat_cap_mask(accepted, run0, cap):
    """Mask of chain states to keep so no state repeats more than ``cap`` times in a row.

    ``run0`` is the current run length of the held state before this segment.
    """
    n = accepted.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    run = run0
    for t in range(n):
        if accepted[t]:
            run = 1
        else:
            run += 1
        keep[t] = run <= cap
    return keep, run


# ----------------------------------------------------------------- autocorrelation


def _autocorr_truncated_np(x, mu, var, threshold):
    n = x.shape[0]
    xc = x - mu
    rho = []
    for s in range(1, n):
        r = float(np.dot(xc[s:], xc[: n - s])) / (var * (n - s))
        if r < threshold:
            break
        rho.append(r)
    return np.asarray(rho, dtype=np.float64)


@jit_or(_autocorr_truncated_np)
def autocorr_truncated(x, mu, var, threshold):
    """Autocorrelations rho_1, rho_2, ... up to (excluding) the first lag below ``threshold``.

    Uses externally supplied reference mean and variance.
    """
    n = x.shape[0]
    xc = x - mu
    out = np.empty(n)
    m = 0
    for s in range(1, n):
        r = np.dot(xc[s:], xc[: n - s]) / (var * (n - s))
        if r < threshold:
            break
        out[m] = r
        m += 1
    return out[:m].copy()


# ----------------------------------------------------------------- pair sums


def _pair_abs_diff_np(a, b, w):
    # sum_ij w_i w_j |a_i b_j - a_j b_i|, chunked to bound memory
    total = 0.0
    n = a.shape[0]
    step = max(1, 4_000_000 // max(n, 1))
    for start in range(0, n, step):
        sl = slice(start, start + step)
        m = np.abs(a[sl, None] * b[None, :] - b[sl, None] * a[None, :])
        total += float(w[sl] @ m @ w)
    return total


@jit_or(_pair_abs_diff_np)
def pair_abs_diff(a, b, w):
    """Tensor-product quadrature of |a(x) b(y) - a(y) b(x)| with node weights ``w``."""
    n = a.shape[0]
    total = 0.0
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += w[j] * abs(a[i] * b[j] - a[j] * b[i])
        total += w[i] * row
    return total


def fallback(kernel):
    """The non-compiled twin of ``kernel`` (itself when numba is off)."""
    return getattr(kernel, "py_func_fallback", kernel)


KERNELS = {
    "imh_scan": imh_scan,
    "repeat_cap_mask": repeat_cap_mask,
    "autocorr_truncated": autocorr_truncated,
    "pair_abs_diff": pair_abs_diff,
}

__all__ = ["NUMBA_AVAILABLE", "KERNELS", "fallback", *KERNELS]
