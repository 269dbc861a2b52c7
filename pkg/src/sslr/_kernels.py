"""Hot numeric kernels: numba-compiled loops with a pure-numpy fallback.

The backend is chosen once at import time from the ``SSLR_BACKEND``
environment variable:

* ``auto`` (default) -- numba if it imports, numpy otherwise;
* ``numba``          -- require numba, fail loudly if missing;
* ``numpy``          -- force the vectorized numpy implementations.

Both backends produce the same results up to floating-point summation
order; within one backend, all kernels are single-threaded and
bit-deterministic.  ``benchmarks/bench_kernels.py`` compares their speed.
"""

import os
import warnings

import numpy as np

__all__ = [
    "BACKEND",
    "conv_forward_naive",
    "conv_adjoint_naive",
    "window_frames",
    "overlap_add",
    "soft_threshold_array",
    "numpy_kernels",
    "get_numba_kernels",
]


# ---------------------------------------------------------------------------
# numpy implementations (vectorized; loops only over small axes)
# ---------------------------------------------------------------------------

def _conv_forward_np(taps, sources):
    # out[m, t] = sum_n sum_tau taps[m, n, tau] * sources[n, t - tau]
    m, n, lf = taps.shape
    t = sources.shape[1]
    out = np.zeros((m, t))
    for tau in range(min(lf, t)):
        out[:, tau:] += taps[:, :, tau] @ sources[:, : t - tau]
    return out


def _conv_adjoint_np(taps, mixture):
    # out[n, t] = sum_m sum_tau taps[m, n, tau] * mixture[m, t + tau]
    m, n, lf = taps.shape
    t = mixture.shape[1]
    out = np.zeros((n, t))
    for tau in range(min(lf, t)):
        out[:, : t - tau] += taps[:, :, tau].T @ mixture[:, tau:]
    return out


def _window_frames_np(padded, window, hop, num_frames):
    length = window.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(padded, length, axis=-1)
    return view[:, ::hop][:, :num_frames] * window


def _overlap_add_np(frames, hop, out_len):
    channels, num_frames, length = frames.shape
    out = np.zeros((channels, out_len), dtype=frames.dtype)
    for q in range(num_frames):
        out[:, q * hop : q * hop + length] += frames[:, q]
    return out


def _soft_threshold_np(values, levels):
    mag = np.abs(values)
    shrunk = np.maximum(mag - levels, 0.0)
    safe = np.where(mag > 0.0, mag, 1.0)
    return values * (shrunk / safe)


# ---------------------------------------------------------------------------
# numba implementations (explicit loops, same arithmetic)
# ---------------------------------------------------------------------------

def _conv_forward_loops(taps, sources, out):
    m, n, lf = taps.shape
    t = sources.shape[1]
    for i in range(m):
        for j in range(n):
            for tau in range(min(lf, t)):
                a = taps[i, j, tau]
                if a == 0.0:
                    continue
                for k in range(tau, t):
                    out[i, k] += a * sources[j, k - tau]


def _conv_adjoint_loops(taps, mixture, out):
    m, n, lf = taps.shape
    t = mixture.shape[1]
    for j in range(n):
        for i in range(m):
            for tau in range(min(lf, t)):
                a = taps[i, j, tau]
                if a == 0.0:
                    continue
                for k in range(t - tau):
                    out[j, k] += a * mixture[i, k + tau]


def _window_frames_loops(padded, window, hop, num_frames, out):
    channels = padded.shape[0]
    length = window.shape[0]
    for c in range(channels):
        for q in range(num_frames):
            base = q * hop
            for k in range(length):
                out[c, q, k] = padded[c, base + k] * window[k]


def _overlap_add_loops(frames, hop, out):
    channels, num_frames, length = frames.shape
    for c in range(channels):
        for q in range(num_frames):
            base = q * hop
            for k in range(length):
                out[c, base + k] += frames[c, q, k]


def _soft_threshold_loops(values, levels, out):
    flat_v = values.ravel()
    flat_l = levels.ravel()
    flat_o = out.ravel()
    for i in range(flat_v.shape[0]):
        mag = abs(flat_v[i])
        keep = mag - flat_l[i]
        if keep > 0.0:
            flat_o[i] = flat_v[i] * (keep / mag)
        else:
            flat_o[i] = 0.0


def _build_numba_kernels():
    from numba import njit

    conv_fwd = njit(cache=True)(_conv_forward_loops)
    conv_adj = njit(cache=True)(_conv_adjoint_loops)
    frames_k = njit(cache=True)(_window_frames_loops)
    ola_k = njit(cache=True)(_overlap_add_loops)
    soft_k = njit(cache=True)(_soft_threshold_loops)

    def conv_forward(taps, sources):
        out = np.zeros((taps.shape[0], sources.shape[1]))
        conv_fwd(taps, sources, out)
        return out

    def conv_adjoint(taps, mixture):
        out = np.zeros((taps.shape[1], mixture.shape[1]))
        conv_adj(taps, mixture, out)
        return out

    def window_frames(padded, window, hop, num_frames):
        out = np.empty((padded.shape[0], num_frames, window.shape[0]))
        frames_k(padded, window, hop, num_frames, out)
        return out

    def overlap_add(frames, hop, out_len):
        out = np.zeros((frames.shape[0], out_len), dtype=frames.dtype)
        ola_k(np.ascontiguousarray(frames), hop, out)
        return out

    def soft_threshold_array(values, levels):
        out = np.empty_like(values)
        soft_k(np.ascontiguousarray(values), np.ascontiguousarray(levels), out)
        return out

    return {
        "conv_forward_naive": conv_forward,
        "conv_adjoint_naive": conv_adjoint,
        "window_frames": window_frames,
        "overlap_add": overlap_add,
        "soft_threshold_array": soft_threshold_array,
    }


numpy_kernels = {
    "conv_forward_naive": _conv_forward_np,
    "conv_adjoint_naive": _conv_adjoint_np,
    "window_frames": _window_frames_np,
    "overlap_add": _overlap_add_np,
    "soft_threshold_array": _soft_threshold_np,
}

_numba_cache = None


def get_numba_kernels():
    """Build (once) and return the numba kernel set; ImportError if absent."""
    global _numba_cache
    if _numba_cache is None:
        _numba_cache = _build_numba_kernels()
    return _numba_cache


def _resolve_backend():
    choice = os.environ.get("SSLR_BACKEND", "auto").strip().lower()
    if choice not in {"auto", "numba", "numpy"}:
        warnings.warn(
            f"unknown SSLR_BACKEND={choice!r}, falling back to 'auto'",
            RuntimeWarning,
        )
        choice = "auto"
    if choice == "numpy":
        return "numpy", numpy_kernels
    try:
        kernels = get_numba_kernels()
    except ImportError:
        if choice == "numba":
            raise
        warnings.warn(
            "numba unavailable, using pure-numpy kernels", RuntimeWarning
        )
        return "numpy", numpy_kernels
    return "numba", kernels


BACKEND, _active = _resolve_backend()

conv_forward_naive = _active["conv_forward_naive"]
conv_adjoint_naive = _active["conv_adjoint_naive"]
window_frames = _active["window_frames"]
overlap_add = _active["overlap_add"]
soft_threshold_array = _active["soft_threshold_array"]
