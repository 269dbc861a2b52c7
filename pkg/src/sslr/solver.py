"""Preconditioned product-space splitting solver plus the outer
reweighting loop.

The inner solver runs the three-block iteration

    y_i <- prox of f_i at (L_i s + z_i)
    z_i <- z_i + L_i s - y_i          (for each block i)
    s   <- s - tau/(gamma*I) * sum_i L_i*(2 z_i_new - z_i_old)

with f_1 the weighted analysis-l1 penalty (L_1 = Id), f_2 the indicator
of the eps-ball around the mixture composed with the mixing operator
(L_2 = A), and f_3 the indicator of the low-rank spectrogram set
(L_3 = Id, optional).  The step bound tau < gamma / ||K||^2 uses
||K||^2 <= 2 + ||A||^2.

The outer loop re-estimates the l1 weights from the current solution
(w = 1 / (|coefficient| + floor)) and warm-starts the next inner solve.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DivergenceError, ShapeMismatchError
from .frames import StftConfig, analyze_array, flatten_coeffs, synthesize_array
from .mixing import FilterBank, MixOperator
from .prox import (
    RankBudget,
    WeightMatrix,
    _prox_weighted_l1_samples,
    lowrank_magnitude_with_info,
    project_l2_ball_arrays,
)
from .signals import MultichannelSignal

__all__ = [
    "SolverConfig",
    "SolverState",
    "IterationDiagnostics",
    "SeparationResult",
    "psdmm_solve",
    "weight_update",
    "sslr_separate",
    "write_diagnostics_csv",
]

# Power-iteration budget for the step-size operator norm estimate.
NORM_EST_ITERATIONS = 100

# Safety factor keeping tau strictly below gamma / ||K||^2 in auto mode.
TAU_SAFETY = 0.9

# Singular values above this fraction of the largest one count towards
# the numerical rank in the rank-excess diagnostic.
RANK_EXCESS_REL_TOL = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of one separation run.

    ``tau=None`` selects the automatic step ``0.9 * gamma / (2 + |A|^2)``;
    an explicit tau is validated against the same bound at solve time.
    ``reweight_floor=None`` selects the automatic floor, 1e-3 times the
    largest coefficient magnitude of the first-round solution.
    """

    eps: float = 1e-4
    rank: int = 10
    gamma: float = 1.0
    tau: float | None = None
    max_inner_iters: int = 500
    inner_tol: float = 1e-5
    reweight_rounds: int = 5
    reweight_floor: float | None = None
    rank_enabled: bool = True
    reweight_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError("eps must be positive")
        if not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")
        if self.tau is not None and not self.tau > 0:
            raise ConfigurationError("tau must be positive when given")
        if self.max_inner_iters < 1:
            raise ConfigurationError("max_inner_iters must be >= 1")
        if self.inner_tol < 0:
            raise ConfigurationError("inner_tol must be >= 0")
        if self.reweight_rounds < 1:
            raise ConfigurationError("reweight_rounds must be >= 1")
        if self.reweight_floor is not None and not self.reweight_floor > 0:
            raise ConfigurationError("reweight_floor must be positive")
        RankBudget(self.rank)  # validates rank >= 1

    @property
    def rank_budget(self) -> RankBudget:
        return RankBudget(self.rank)


@dataclass
class SolverState:
    """Live view of one inner iteration, handed to callbacks.

    ``y`` and ``z`` are keyed 1..I in block order (1: analysis-l1,
    2: data ball, 3: rank set when enabled); shapes stay fixed across
    iterations.
    """

    s: np.ndarray
    y: dict
    z: dict
    iteration: int


@dataclass
class IterationDiagnostics:
    """Per-iteration history of one inner solve."""

    residual: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    s_change: list = field(default_factory=list)
    rank_excess: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)

    @property
    def num_iterations(self) -> int:
        return len(self.residual)

    def record(self, residual, objective, s_change, rank_excess, wall_ms):
        self.residual.append(float(residual))
        self.objective.append(float(objective))
        self.s_change.append(float(s_change))
        self.rank_excess.append(float(rank_excess))
        self.wall_ms.append(float(wall_ms))


@dataclass(frozen=True, eq=False)
class SeparationResult:
    """Estimated sources plus everything needed to audit the run."""

    estimates: MultichannelSignal
    diagnostics: list
    solver_config: SolverConfig
    stft_config: StftConfig
    round_estimates: list
    reweight_floor_used: float
    operator_norm: float
    sdr_per_source: np.ndarray | None = None

    @property
    def total_iterations(self) -> int:
        return sum(d.num_iterations for d in self.diagnostics)

    def with_sdr(self, sdr_per_source) -> "SeparationResult":
        return SeparationResult(
            estimates=self.estimates,
            diagnostics=self.diagnostics,
            solver_config=self.solver_config,
            stft_config=self.stft_config,
            round_estimates=self.round_estimates,
            reweight_floor_used=self.reweight_floor_used,
            operator_norm=self.operator_norm,
            sdr_per_source=np.asarray(sdr_per_source, dtype=np.float64),
        )


def weighted_l1_objective(samples, weights, cfg) -> float:
    """The penalty value sum w_ij |coefficient_ij| at ``samples``."""
    grid = analyze_array(samples, cfg)
    return float(np.sum(weights * np.abs(flatten_coeffs(grid))))


def weight_update(
    s: MultichannelSignal, stft_cfg: StftConfig, floor: float
) -> WeightMatrix:
    """Inverse-magnitude weights 1 / (|coefficient| + floor)."""
    if not floor > 0:
        raise ConfigurationError("floor must be positive")
    grid = analyze_array(s.samples, stft_cfg)
    return WeightMatrix(1.0 / (np.abs(flatten_coeffs(grid)) + floor))


# ---------------------------------------------------------------------------
# Inner solver
# ---------------------------------------------------------------------------

def _resolve_tau(cfg: SolverConfig, operator_norm: float) -> float:
    k_norm_sq = 2.0 + operator_norm**2
    bound = cfg.gamma / k_norm_sq
    if cfg.tau is not None:
        if not cfg.tau < bound:
            raise ConfigurationError(
                f"tau={cfg.tau} violates the step bound "
                f"gamma/||K||^2 = {bound:.6g}"
            )
        return cfg.tau
    return TAU_SAFETY * bound


def _rank_excess_from_sigmas(sigmas, rank) -> float:
    excess = 0
    for sigma in sigmas:
        top = sigma[0] if sigma.size else 0.0
        if top <= 0.0:
            continue
        numerical_rank = int(np.sum(sigma > RANK_EXCESS_REL_TOL * top))
        excess = max(excess, numerical_rank - rank)
    return float(max(excess, 0))


def psdmm_solve(
    x: MultichannelSignal,
    filters: FilterBank,
    w: WeightMatrix,
    cfg: SolverConfig,
    stft_cfg: StftConfig,
    s0: MultichannelSignal,
    callback=None,
    operator_norm: float | None = None,
) -> tuple[MultichannelSignal, IterationDiagnostics]:
    """Run the inner splitting solver from ``s0`` with fixed weights.

    Returns the final iterate and its per-iteration diagnostics.  Raises
    DivergenceError (with the partial diagnostics attached) if an
    iterate stops being finite, and ConfigurationError if an explicit
    tau violates the step bound.
    """
    if x.num_channels != filters.num_out:
        raise ShapeMismatchError(
            f"mixture has {x.num_channels} channels, filters expect "
            f"{filters.num_out}"
        )
    if s0.num_channels != filters.num_in:
        raise ShapeMismatchError(
            f"initial sources have {s0.num_channels} channels, filters "
            f"expect {filters.num_in}"
        )
    if x.num_samples != s0.num_samples:
        raise ShapeMismatchError("mixture and sources lengths differ")
    if stft_cfg.num_samples != x.num_samples:
        raise ConfigurationError(
            "stft config was built for a different signal length"
        )
    num_sources = filters.num_in
    if w.weights.shape != (num_sources, stft_cfg.num_coeffs):
        raise ShapeMismatchError(
            f"weights shaped {w.weights.shape}, expected "
            f"{(num_sources, stft_cfg.num_coeffs)}"
        )
    if cfg.rank_enabled:
        max_rank = min(stft_cfg.num_frames, stft_cfg.num_bins)
        if cfg.rank > max_rank:
            raise ConfigurationError(
                f"rank budget {cfg.rank} exceeds min(Q, F) = {max_rank}"
            )

    op = MixOperator(filters.taps, x.num_samples)
    if operator_norm is None:
        operator_norm = op.norm_estimate(NORM_EST_ITERATIONS, seed=cfg.seed)
    tau = _resolve_tau(cfg, operator_norm)
    gamma = cfg.gamma
    num_blocks = 3 if cfg.rank_enabled else 2
    scale = tau / (gamma * num_blocks)

    x_arr = x.samples
    weights = w.weights
    s = s0.samples.copy()
    z1 = np.zeros_like(s)
    z2 = np.zeros_like(x_arr)
    z3 = np.zeros_like(s) if cfg.rank_enabled else None

    diag = IterationDiagnostics()
    a_s = op.apply(s)

    for iteration in range(cfg.max_inner_iters):
        t_start = time.perf_counter()
        s_old = s

        # block 1: weighted analysis-l1 prox, L1 = Id
        y1 = _prox_weighted_l1_samples(s + z1, weights, gamma, stft_cfg)
        z1_new = z1 + s - y1

        # block 2: data-fidelity ball projection, L2 = A
        y2 = project_l2_ball_arrays(a_s + z2, x_arr, cfg.eps)
        z2_new = z2 + a_s - y2

        # block 3: low-rank spectrogram projection, L3 = Id
        rank_excess = 0.0
        if cfg.rank_enabled:
            y3, sigmas = _project_rank_block(s + z3, cfg.rank, stft_cfg)
            z3_new = z3 + s - y3
            rank_excess = _rank_excess_from_sigmas(sigmas, cfg.rank)

        update = (2.0 * z1_new - z1) + op.adjoint(2.0 * z2_new - z2)
        if cfg.rank_enabled:
            update += 2.0 * z3_new - z3
        s = s - scale * update

        if not np.isfinite(s).all():
            raise DivergenceError(
                f"iterate became non-finite at inner iteration {iteration}",
                diagnostics=diag,
            )

        z1, z2 = z1_new, z2_new
        if cfg.rank_enabled:
            z3 = z3_new

        a_s = op.apply(s)
        s_norm_old = np.linalg.norm(s_old)
        s_change = np.linalg.norm(s - s_old) / max(s_norm_old, 1e-12)
        diag.record(
            residual=np.linalg.norm(x_arr - a_s),
            objective=weighted_l1_objective(s, weights, stft_cfg),
            s_change=s_change,
            rank_excess=rank_excess,
            wall_ms=(time.perf_counter() - t_start) * 1e3,
        )

        if callback is not None:
            y = {1: y1, 2: y2}
            z = {1: z1, 2: z2}
            if cfg.rank_enabled:
                y[3] = y3
                z[3] = z3
            callback(SolverState(s=s, y=y, z=z, iteration=iteration))

        if s_change < cfg.inner_tol:
            break

    return MultichannelSignal(s, x.sample_rate), diag


def _project_rank_block(samples, rank, cfg):
    """Rank projection acting on an s-shaped block variable.

    Truncation happens on the coefficient grid (where the singular
    values beyond the budget are exactly zero) before synthesis maps the
    block back to the signal domain.
    """
    grid = analyze_array(samples, cfg)
    sigmas = []
    for n in range(grid.shape[0]):
        grid[n], sigma = lowrank_magnitude_with_info(grid[n], rank)
        sigmas.append(sigma)
    from .frames import synthesize_array

    back = synthesize_array(grid, cfg)
    return back.real / cfg.frame_constant, sigmas


# ---------------------------------------------------------------------------
# Outer reweighting loop
# ---------------------------------------------------------------------------

def sslr_separate(
    x: MultichannelSignal,
    filters: FilterBank,
    cfg: SolverConfig,
    stft_cfg: StftConfig,
    callback=None,
) -> SeparationResult:
    """Full separation: matched-filter start, inner solves, reweighting.

    Round 0 runs with uniform weights from s0 = A*(x) / max(1, |A|^2);
    every later round rebuilds the weights from the previous solution
    and warm-starts from it.  With ``rank_enabled=False`` this is the
    sparse-only baseline; with ``reweight_rounds=1`` it is a single
    weighted-l1 solve.
    """
    op = MixOperator(filters.taps, x.num_samples)
    operator_norm = op.norm_estimate(NORM_EST_ITERATIONS, seed=cfg.seed)
    s0_arr = op.adjoint(x.samples) / max(1.0, operator_norm**2)
    s0 = MultichannelSignal(s0_arr, x.sample_rate)

    num_sources = filters.num_in
    weights = WeightMatrix.uniform(num_sources, stft_cfg.num_coeffs)

    rounds = cfg.reweight_rounds if cfg.reweight_enabled else 1
    diagnostics = []
    round_estimates = []
    floor = cfg.reweight_floor
    current = s0

    for round_index in range(rounds):
        current, diag = psdmm_solve(
            x,
            filters,
            weights,
            cfg,
            stft_cfg,
            current,
            callback=callback,
            operator_norm=operator_norm,
        )
        diagnostics.append(diag)
        round_estimates.append(current.samples.copy())
        if round_index == rounds - 1:
            break
        if floor is None:
            coeffs = flatten_coeffs(analyze_array(current.samples, stft_cfg))
            peak = float(np.max(np.abs(coeffs)))
            floor = max(1e-3 * peak, 1e-12)
        weights = weight_update(current, stft_cfg, floor)

    return SeparationResult(
        estimates=current,
        diagnostics=diagnostics,
        solver_config=cfg,
        stft_config=stft_cfg,
        round_estimates=round_estimates,
        reweight_floor_used=float(floor) if floor is not None else float("nan"),
        operator_norm=float(operator_norm),
    )


def write_diagnostics_csv(diagnostics, path) -> None:
    """Dump per-iteration records; the iteration index runs across rounds."""
    if isinstance(diagnostics, IterationDiagnostics):
        diagnostics = [diagnostics]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iter", "residual", "objective", "s_change", "rank_excess",
             "wall_ms"]
        )
        counter = 0
        for diag in diagnostics:
            for i in range(diag.num_iterations):
                writer.writerow(
                    [
                        counter,
                        f"{diag.residual[i]:.17g}",
                        f"{diag.objective[i]:.17g}",
                        f"{diag.s_change[i]:.17g}",
                        f"{diag.rank_excess[i]:.17g}",
                        f"{diag.wall_ms[i]:.3f}",
                    ]
                )
                counter += 1
