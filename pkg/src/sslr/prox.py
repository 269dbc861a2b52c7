"""Proximity and projection operators used by the splitting solver.

Three operators: the prox of the weighted analysis-l1 penalty over a
tight frame (soft thresholding in the coefficient domain plus a scaled
correction in the signal domain), projection onto an l2 ball, and
projection onto the set of signals whose per-source spectrogram has
bounded rank (truncated SVD of the magnitude with phases re-attached).
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import soft_threshold_array
from .errors import ConfigurationError, FrameError, ShapeMismatchError
from .frames import StftConfig, analyze_array, synthesize_array, unflatten_coeffs
from .signals import MultichannelSignal

__all__ = [
    "WeightMatrix",
    "RankBudget",
    "soft_threshold",
    "prox_weighted_l1_analysis",
    "project_l2_ball",
    "truncated_svd",
    "project_lowrank_magnitude",
    "project_rank_constraint_set",
]

# Frames whose measured round-trip residual exceeds this are rejected by
# the analysis-l1 prox (its closed form needs a tight frame).
TIGHT_FRAME_TOL = 1e-8

# Magnitudes at or below this are treated as zero phase (phase factor 1).
ZERO_PHASE_EPS = 1e-300


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Non-negative per-coefficient l1 weights, sources x coefficients."""

    weights: np.ndarray

    def __post_init__(self):
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if weights.ndim == 1:
            weights = weights[np.newaxis, :]
        if weights.ndim != 2:
            raise ConfigurationError("weights must be a 2-D matrix")
        if not np.isfinite(weights).all() or (weights < 0).any():
            raise ConfigurationError("weights must be finite and >= 0")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, num_sources: int, num_coeffs: int, value: float = 1.0):
        return cls(np.full((num_sources, num_coeffs), float(value)))


@dataclass(frozen=True)
class RankBudget:
    """Maximum allowed rank of each source spectrogram."""

    r: int

    def __post_init__(self):
        if self.r < 1:
            raise ConfigurationError(f"rank budget must be >= 1, got {self.r}")


def _rank_value(r) -> int:
    return r.r if isinstance(r, RankBudget) else int(r)


def soft_threshold(z: complex, lam: float) -> complex:
    """Shrink the magnitude of ``z`` by ``lam``, keeping its phase."""
    if lam < 0:
        raise ConfigurationError("threshold level must be >= 0")
    mag = abs(z)
    if mag <= lam:
        return 0j
    return z * ((mag - lam) / mag)


def prox_weighted_l1_analysis(
    s: MultichannelSignal,
    w: WeightMatrix,
    gamma: float,
    cfg: StftConfig,
) -> MultichannelSignal:
    """Prox of gamma * ||analyze(.)||_{w,1} for a tight frame.

    Soft-thresholds the analysis coefficients at levels
    ``frame_constant * gamma * w`` and feeds the coefficient change back
    through synthesis scaled by 1/frame_constant; for tight frames this
    equals the exact proximity operator.
    """
    if cfg.frame_residual > TIGHT_FRAME_TOL:
        raise FrameError(
            f"frame residual {cfg.frame_residual:.3e} exceeds "
            f"{TIGHT_FRAME_TOL:.1e}; the closed-form prox needs a tight frame"
        )
    if not gamma > 0:
        raise ConfigurationError("gamma must be positive")
    weights = w.weights
    if weights.shape != (s.num_channels, cfg.num_coeffs):
        raise ShapeMismatchError(
            f"weights shaped {weights.shape}, expected "
            f"{(s.num_channels, cfg.num_coeffs)}"
        )
    out = _prox_weighted_l1_samples(s.samples, weights, gamma, cfg)
    return s.with_samples(out)


def _prox_weighted_l1_samples(samples, weights, gamma, cfg):
    """Array-level prox core (samples (N, T), weights (N, B)).

    Weights are symmetrized across conjugate bin pairs first: mirrored
    bins of a real signal carry equal coefficient magnitudes, so the
    penalty only ever sees the symmetric part, and the closed-form prox
    is exact for the symmetrized thresholds.
    """
    nu = cfg.frame_constant
    grid = analyze_array(samples, cfg)
    levels = unflatten_coeffs(weights, cfg)
    mirror = (cfg.num_bins - np.arange(cfg.num_bins)) % cfg.num_bins
    levels = (levels + levels[:, :, mirror]) * (0.5 * nu * gamma)
    shrunk = soft_threshold_array(grid, levels)
    shrunk -= grid
    correction = synthesize_array(shrunk, cfg)
    return samples + correction.real / nu


def project_l2_ball(
    z: MultichannelSignal, center: MultichannelSignal, eps: float
) -> MultichannelSignal:
    """Nearest point to ``z`` within the eps-ball around ``center``."""
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    if z.samples.shape != center.samples.shape:
        raise ShapeMismatchError(
            f"shapes {z.samples.shape} and {center.samples.shape} differ"
        )
    out = project_l2_ball_arrays(z.samples, center.samples, eps)
    return z.with_samples(out)


def project_l2_ball_arrays(z, center, eps):
    diff = z - center
    dist = np.linalg.norm(diff)
    if dist <= eps:
        return z.copy()
    return center + (eps / dist) * diff


def truncated_svd(m: np.ndarray, r) -> np.ndarray:
    """Frobenius-nearest matrix of rank <= r (top-r SVD reconstruction)."""
    r = _rank_value(r)
    if r < 1:
        raise ConfigurationError("rank must be >= 1")
    m = np.asarray(m, dtype=np.float64)
    if not np.isfinite(m).all():
        raise ConfigurationError("matrix contains non-finite values")
    if r >= min(m.shape):
        return m.copy()
    u, sigma, vt = np.linalg.svd(m, full_matrices=False)
    return (u[:, :r] * sigma[:r]) @ vt[:r]


def project_lowrank_magnitude(z: np.ndarray, r) -> np.ndarray:
    """Nearest complex matrix whose magnitude has rank <= r.

    Truncated SVD of |z| with the phases of z re-attached.  Small
    negative entries produced by the truncation are clipped to zero
    before the phases go back on (a magnitude cannot be negative; the
    clip never moves the result further from ``z``).
    """
    out, _ = lowrank_magnitude_with_info(z, r)
    return out


def lowrank_magnitude_with_info(z, r):
    """Projection plus the singular values of |z| (for diagnostics)."""
    r = _rank_value(r)
    z = np.asarray(z, dtype=np.complex128)
    mag = np.abs(z)
    if r >= min(mag.shape):
        return z.copy(), np.linalg.svd(mag, compute_uv=False)
    u, sigma, vt = np.linalg.svd(mag, full_matrices=False)
    low = (u[:, :r] * sigma[:r]) @ vt[:r]
    np.maximum(low, 0.0, out=low)
    phase = np.divide(
        z, mag, out=np.ones_like(z), where=mag > ZERO_PHASE_EPS
    )
    return low * phase, sigma


def project_rank_constraint_set(
    s: MultichannelSignal, r, cfg: StftConfig
) -> MultichannelSignal:
    """Per source: analyze, project the magnitude to rank <= r keeping
    phases, synthesize back (scaled by 1/frame_constant)."""
    out, _ = project_rank_samples(s.samples, r, cfg)
    return s.with_samples(out)


def project_rank_samples(samples, r, cfg):
    """Array-level rank projection; also returns per-source singular
    values of the pre-projection spectrograms."""
    r = _rank_value(r)
    if r > min(cfg.num_frames, cfg.num_bins):
        raise ConfigurationError(
            f"rank budget {r} exceeds spectrogram rank bound "
            f"{min(cfg.num_frames, cfg.num_bins)}"
        )
    grid = analyze_array(samples, cfg)
    spectra = []
    for n in range(grid.shape[0]):
        grid[n], sigma = lowrank_magnitude_with_info(grid[n], r)
        spectra.append(sigma)
    back = synthesize_array(grid, cfg)
    return back.real / cfg.frame_constant, np.asarray(spectra)
