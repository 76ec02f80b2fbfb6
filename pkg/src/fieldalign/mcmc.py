"""Bayesian pairwise alignment by Gibbs-within-Metropolis sampling.

The posterior over (rotation, translation, masks, precision) combines an
exponential (or half-normal) likelihood in the Kernel Carbo dissimilarity, a
Gamma prior on the precision, the mask penalty/interaction prior and the
rotation prior.  One sweep updates, in order: the rotation block, the
translation block, the precision (Gibbs), the mask of set A and the mask of
set B.  Dynamic range/weight schedules, simulated annealing, periodic
escape proposals and threshold-triggered restarts are layered on top.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .covariance import CovarianceModel, gram_cholesky, kernel_evaluator
from .geometry import (
    MarkedPointSet,
    RigidTransform,
    euler_prior_log_density,
    n_euler_angles,
    random_rotation,
    recover_euler,
    rotation_matrix,
    wrap_angles,
)
from .kriging import DegenerateFieldError, EmptyFieldError, solve_weights
from .similarity import CarboScore, dissimilarity_from_similarity

EXPONENTIAL = "exponential"
HALF_NORMAL = "half_normal"

_NORM_SQ_FLOOR = 1e-300


class ConfigurationError(ValueError):
    """Inconsistent sampler configuration."""


@dataclass(frozen=True)
class LinearSchedule:
    """Linear interpolation from start to end over the first n_iterations,
    constant at end afterwards."""

    start: float
    end: float
    n_iterations: int

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("schedule length must be at least 1")

    def value(self, iteration: int) -> float:
        if iteration >= self.n_iterations:
            return self.end
        frac = iteration / self.n_iterations
        return self.start + (self.end - self.start) * frac


@dataclass(frozen=True)
class Hyperparameters:
    """Priors, proposal scales, schedules and run-length settings."""

    alpha: float
    beta: float
    proposal_sd_rotation: float  # radians
    proposal_sd_translation: float
    n_iterations: int
    zeta: float = 1.0
    zeta_i: float = 1.0
    neighbor_delta: float | None = None
    escape_period: int | None = 125
    escape_scale: float = 10.0
    restart_threshold: float | None = None
    restart_check_iter: int | None = None
    max_restarts: int = 0
    burn_in: int | None = None  # default: 20% of n_iterations
    thin: int = 20
    likelihood_kind: str = EXPONENTIAL
    annealing_schedule: LinearSchedule | None = None
    range_schedule: LinearSchedule | None = None
    weight_schedule: LinearSchedule | None = None
    weight_q: float = 0.5
    update_rigid: bool = True
    update_masks: bool = True
    update_tau: bool = True
    tau_init: float | None = None

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigurationError("alpha and beta must be positive")
        if self.zeta < 0 or self.zeta_i < 0:
            raise ConfigurationError("zeta and zeta_i must be nonnegative")
        if self.n_iterations < 1:
            raise ConfigurationError("n_iterations must be positive")
        if self.burn_in is not None and not 0 <= self.burn_in < self.n_iterations:
            raise ConfigurationError("burn_in must lie in [0, n_iterations)")
        if self.thin < 1:
            raise ConfigurationError("thin must be at least 1")
        if self.likelihood_kind not in (EXPONENTIAL, HALF_NORMAL):
            raise ConfigurationError(f"unknown likelihood {self.likelihood_kind!r}")
        if not 0.0 <= self.weight_q <= 1.0:
            raise ConfigurationError("weight_q must lie in [0, 1]")
        if (self.restart_check_iter is None) != (self.restart_threshold is None):
            raise ConfigurationError(
                "restart_check_iter and restart_threshold go together"
            )
        if not self.update_tau and self.tau_init is None:
            raise ConfigurationError("fixed-tau runs need tau_init")

    @property
    def effective_burn_in(self) -> int:
        return self.burn_in if self.burn_in is not None else self.n_iterations // 5

    @property
    def settle_iteration(self) -> int:
        settle = 0
        for sched in (self.range_schedule, self.weight_schedule):
            if sched is not None:
                settle = max(settle, sched.n_iterations)
        return settle


@dataclass(frozen=True)
class InitSpec:
    """Distribution of chain starting states (also used for restarts)."""

    rotation_range: float = np.pi  # radians, per-angle U[-r, r]
    translation_range: float = 0.0  # per-axis U[-r, r]
    haar_rotation: bool = False
    mask_p: float = 0.5

    def sample_transform(self, rng: np.random.Generator, dimension: int) -> RigidTransform:
        if self.haar_rotation:
            euler = recover_euler(random_rotation(rng, dimension))
        else:
            r = self.rotation_range
            euler = wrap_angles(rng.uniform(-r, r, n_euler_angles(dimension)))
        translation = rng.uniform(
            -self.translation_range, self.translation_range, dimension
        )
        return RigidTransform(euler, translation)

    def sample_mask(self, rng: np.random.Generator, k: int) -> np.ndarray:
        if self.mask_p >= 1.0:
            return np.ones(k, dtype=bool)
        mask = rng.random(k) < self.mask_p
        if not mask.any():
            mask[rng.integers(k)] = True
        return mask


@dataclass(frozen=True, eq=False)
class ChainState:
    """One full parameter state together with its scores and log posterior."""

    transform: RigidTransform
    mask_a: np.ndarray | None
    mask_b: np.ndarray
    tau: float
    carbo: CarboScore
    channel_scores: tuple[CarboScore, ...]
    log_posterior: float
    iteration: int = 0

    @property
    def n_unmasked_a(self) -> int:
        return int(self.mask_a.sum()) if self.mask_a is not None else 0

    @property
    def n_unmasked_b(self) -> int:
        return int(self.mask_b.sum())


@dataclass(eq=False)
class AlignmentResult:
    """MAP/final states, plug-in distances, traces and diagnostics."""

    map_state: ChainState
    final_state: ChainState
    plug_in_distance: float
    plug_in_distance_mean: float
    mean_transform: RigidTransform
    mean_mask_a: np.ndarray | None
    mean_mask_b: np.ndarray
    mask_inclusion_means_a: np.ndarray | None
    mask_inclusion_means_b: np.ndarray
    mean_tau: float
    traces: np.ndarray
    trace_columns: tuple[str, ...]
    acceptance_rates: dict[str, float]
    n_restarts: int
    failed: bool
    n_iterations: int


def log_likelihood(carbo_dissimilarity: float, tau: float, kind: str = EXPONENTIAL) -> float:
    """Log likelihood of the observed pair given dissimilarity D and
    precision tau: log(tau) - tau D (exponential) or log(tau)/2 - tau D^2
    (half-normal).  Infinite D gives -inf."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if not np.isfinite(carbo_dissimilarity):
        return -np.inf
    if carbo_dissimilarity < 0:
        raise ValueError("dissimilarity must be nonnegative")
    if kind == EXPONENTIAL:
        return math.log(tau) - tau * carbo_dissimilarity
    if kind == HALF_NORMAL:
        return 0.5 * math.log(tau) - tau * carbo_dissimilarity**2
    raise ConfigurationError(f"unknown likelihood {kind!r}")


def log_tau_prior(tau: float, alpha: float, beta: float) -> float:
    """Unnormalized Gamma(alpha, beta) log prior density of tau."""
    return (alpha - 1.0) * math.log(tau) - beta * tau


def _pow_log(base: float, exponent: float) -> float:
    # log(base ** exponent) under the 0^0 = 1 convention
    if exponent == 0:
        return 0.0
    if base == 0.0:
        return -np.inf
    return exponent * math.log(base)


def _mask_log_prior_exponents(zeta: float, zeta_i: float, total: float, boundary: float) -> float:
    return float(np.logaddexp(_pow_log(zeta, total), _pow_log(zeta_i, boundary)))


def neighbor_pairs(coords, delta: float) -> np.ndarray:
    """Index pairs (i, j), i < j, with ||x_i - x_j|| < delta."""
    pts = np.atleast_2d(np.asarray(coords, dtype=float))
    d = cdist(pts, pts)
    ii, jj = np.where(np.triu(d < delta, 1))
    return np.column_stack([ii, jj])


def _boundary_count(mask: np.ndarray, pairs: np.ndarray) -> int:
    if pairs.size == 0:
        return 0
    return int(np.sum(mask[pairs[:, 0]] != mask[pairs[:, 1]]))


def mask_log_prior(
    mask_a,
    mask_b,
    coords_a,
    coords_b,
    zeta: float,
    zeta_i: float,
    neighbor_delta: float,
) -> float:
    """Log of zeta^(total unmasked) + zeta_i^(neighbor disagreement count).

    Neighbors are point pairs closer than neighbor_delta within each set.
    Either mask may be None (its terms drop out), which is used when one
    side of the alignment is a frozen reference field.
    """
    total = 0.0
    boundary = 0.0
    for mask, coords in ((mask_a, coords_a), (mask_b, coords_b)):
        if mask is None:
            continue
        mask = np.asarray(mask).astype(bool)
        total += float(mask.sum())
        if zeta_i != 1.0:
            boundary += _boundary_count(mask, neighbor_pairs(coords, neighbor_delta))
    return _mask_log_prior_exponents(zeta, zeta_i, total, boundary)


def gibbs_update_tau(
    carbo_dissimilarity: float,
    alpha: float,
    beta: float,
    rng: np.random.Generator,
    kind: str = EXPONENTIAL,
    temperature: float = 1.0,
) -> float | None:
    """Draw the precision from its full conditional.

    Exponential likelihood gives Gamma(alpha + 1, D + beta); half-normal
    gives Gamma(alpha + 1/2, D^2 + beta).  Under annealing at temperature T
    the tempered conditional Gamma((s - 1)/T + 1, r/T) is used, which
    reduces to the above at T = 1.  Returns None (no update) for infinite D.
    """
    if not np.isfinite(carbo_dissimilarity):
        return None
    if kind == EXPONENTIAL:
        shape = alpha + 1.0
        rate = carbo_dissimilarity + beta
    elif kind == HALF_NORMAL:
        shape = alpha + 0.5
        rate = carbo_dissimilarity**2 + beta
    else:
        raise ConfigurationError(f"unknown likelihood {kind!r}")
    if temperature != 1.0:
        shape = (shape - 1.0) / temperature + 1.0
        rate = rate / temperature
    return float(rng.gamma(shape, 1.0 / rate))


def annealed_target(log_posterior: float, temperature: float) -> float:
    """Tempered log target log pi^(1/T) = log_posterior / T."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return log_posterior / temperature


class _Channel:
    """Per-channel kernels, marks, weights and cross terms."""

    __slots__ = (
        "base_model",
        "model",
        "kernel_fn",
        "marks_a",
        "marks_b",
        "ref_coeffs",
        "w_a",
        "norm_a",
        "coeff_a",
        "w_b",
        "norm_b",
        "coeff_b",
        "kcross",
        "inner",
        "similarity",
    )

    def __init__(self, model: CovarianceModel, marks_a, marks_b, ref_coeffs=None):
        self.base_model = model
        self.marks_a = None if marks_a is None else np.asarray(marks_a, dtype=float)
        self.marks_b = np.asarray(marks_b, dtype=float)
        self.ref_coeffs = (
            None if ref_coeffs is None else np.asarray(ref_coeffs, dtype=float)
        )
        self.set_model(model)

    def set_model(self, model: CovarianceModel):
        self.model = model
        self.kernel_fn = kernel_evaluator(model)


def _side_weights(
    model: CovarianceModel,
    coords: np.ndarray,
    marks: np.ndarray,
    active: np.ndarray,
    kernel_fn=None,
):
    """Kriging weights and RKHS norm of the masked side; raises
    DegenerateFieldError when the norm vanishes."""
    sub = coords[active]
    gram = kernel_fn(cdist(sub, sub)) if kernel_fn is not None else None
    chol, _ = gram_cholesky(model, sub, gram=gram)
    z = marks[active]
    w = solve_weights(chol, z)
    norm_sq = float(w @ z)
    if norm_sq <= _NORM_SQ_FLOOR:
        raise DegenerateFieldError("masked field has zero RKHS norm")
    norm = math.sqrt(norm_sq)
    return w, norm


class PairEngine:
    """Mutable sampling engine for one alignment problem.

    The reference side is either a second marked point set (pairwise mode,
    both masks updated) or a frozen linear combination of kernel bumps
    (mean-field mode used by field GPA, where only the movable mask exists).
    Channel order is (charge, steric) in two-channel runs; the dynamic
    weight applies to the first channel.
    """

    def __init__(
        self,
        coords_a: np.ndarray,
        coords_b: np.ndarray,
        channels: list[_Channel],
        hyper: Hyperparameters,
        field_mode: bool,
    ):
        self.coords_a = np.asarray(coords_a, dtype=float)
        self.coords_b = np.asarray(coords_b, dtype=float)
        self.channels = channels
        self.hyper = hyper
        self.field_mode = field_mode
        self.m = self.coords_b.shape[1]
        if self.coords_a.shape[1] != self.m:
            raise ConfigurationError("point sets live in different dimensions")
        if len(channels) == 2 and hyper.range_schedule is not None:
            raise ConfigurationError(
                "the dynamic range schedule only supports a single channel"
            )
        if len(channels) == 1 and hyper.weight_schedule is not None:
            raise ConfigurationError(
                "the dynamic weight schedule needs two mark channels"
            )
        if field_mode and hyper.range_schedule is not None:
            raise ConfigurationError(
                "the dynamic range schedule is unavailable against a frozen field"
            )
        delta = hyper.neighbor_delta
        if delta is None:
            delta = 2.0 * min(ch.base_model.rho for ch in channels)
        self.neighbor_delta = delta
        if hyper.zeta_i != 1.0:
            self._pairs_a = (
                None if field_mode else neighbor_pairs(self.coords_a, delta)
            )
            self._pairs_b = neighbor_pairs(self.coords_b, delta)
        else:
            self._pairs_a = None
            self._pairs_b = np.empty((0, 2), dtype=int)
        # current state
        self.euler = np.zeros(n_euler_angles(self.m))
        self.translation = np.zeros(self.m)
        self.gmat = np.eye(self.m)
        self.mask_a: np.ndarray | None = None
        self.mask_b: np.ndarray | None = None
        self.act_a: np.ndarray | None = None
        self.act_b: np.ndarray | None = None
        self.tau = 1.0
        self.temperature = 1.0
        self.weight_q = hyper.weight_q
        self.rho_current = channels[0].base_model.rho
        self.dissimilarity = np.inf
        self.log_lik = -np.inf
        self.lp_mask = 0.0
        self.lp_euler = 0.0
        self.lp_tau = 0.0
        self.log_posterior = -np.inf
        self.counters: dict[str, list[int]] = {}

    # -- construction ----------------------------------------------------

    @classmethod
    def for_pair(cls, set_a, set_b, models, hyper: Hyperparameters) -> "PairEngine":
        sets_a = (set_a,) if isinstance(set_a, MarkedPointSet) else tuple(set_a)
        sets_b = (set_b,) if isinstance(set_b, MarkedPointSet) else tuple(set_b)
        models = (models,) if isinstance(models, CovarianceModel) else tuple(models)
        if not len(sets_a) == len(sets_b) == len(models):
            raise ConfigurationError(
                "channel counts of set_a, set_b and models must match"
            )
        if len(sets_a) not in (1, 2):
            raise ConfigurationError("one or two mark channels are supported")
        coords_a = sets_a[0].coords
        coords_b = sets_b[0].coords
        for s in sets_a[1:]:
            if not np.array_equal(s.coords, coords_a):
                raise ConfigurationError("channels of set A must share coordinates")
        for s in sets_b[1:]:
            if not np.array_equal(s.coords, coords_b):
                raise ConfigurationError("channels of set B must share coordinates")
        channels = [
            _Channel(model, sa.marks, sb.marks)
            for model, sa, sb in zip(models, sets_a, sets_b)
        ]
        return cls(coords_a, coords_b, channels, hyper, field_mode=False)

    @classmethod
    def for_reference_field(
        cls,
        ref_coords,
        ref_coeffs,
        movable: MarkedPointSet,
        model: CovarianceModel,
        hyper: Hyperparameters,
    ) -> "PairEngine":
        channel = _Channel(model, None, movable.marks, ref_coeffs=ref_coeffs)
        return cls(
            np.asarray(ref_coords, dtype=float),
            movable.coords,
            [channel],
            hyper,
            field_mode=True,
        )

    # -- internal recomputation ------------------------------------------

    def _cross(self, channel: _Channel, gmat: np.ndarray, translation: np.ndarray) -> np.ndarray:
        moved = self.coords_b @ gmat.T + translation
        return channel.kernel_fn(cdist(self.coords_a, moved))

    def _similarity(self, channel: _Channel, kcross, act_a, coeff_a, act_b, coeff_b):
        if self.field_mode:
            sub = kcross[:, act_b]
            inner = float(coeff_a @ sub @ coeff_b)
        else:
            sub = kcross[np.ix_(act_a, act_b)]
            inner = float(coeff_a @ sub @ coeff_b)
        return inner, float(np.clip(inner, -1.0, 1.0))

    def _combined(self, sims: list[float]) -> float:
        if len(sims) == 1:
            return dissimilarity_from_similarity(sims[0])
        wq = self.weight_q
        total = 0.0
        if wq > 0.0:
            total += wq * dissimilarity_from_similarity(sims[0])
        if wq < 1.0:
            total += (1.0 - wq) * dissimilarity_from_similarity(sims[1])
        return total

    def _mask_prior_value(self, mask_a, mask_b) -> float:
        total = float(mask_b.sum())
        boundary = 0.0
        if mask_a is not None:
            total += float(mask_a.sum())
        if self.hyper.zeta_i != 1.0:
            boundary = _boundary_count(mask_b, self._pairs_b)
            if mask_a is not None and self._pairs_a is not None:
                boundary += _boundary_count(mask_a, self._pairs_a)
        return _mask_log_prior_exponents(
            self.hyper.zeta, self.hyper.zeta_i, total, boundary
        )

    def _refresh_scalars(self):
        sims = [ch.similarity for ch in self.channels]
        self.dissimilarity = self._combined(sims)
        self.log_lik = log_likelihood(
            self.dissimilarity, self.tau, self.hyper.likelihood_kind
        )
        self.lp_tau = log_tau_prior(self.tau, self.hyper.alpha, self.hyper.beta)
        self.log_posterior = self.log_lik + self.lp_tau + self.lp_mask + self.lp_euler

    # -- state installation ----------------------------------------------

    def install_state(
        self,
        transform: RigidTransform,
        mask_a,
        mask_b,
        tau: float | None,
        rng: np.random.Generator | None = None,
    ):
        """Full recompute of every cached quantity from the given state.

        tau=None draws the precision from its full conditional at the
        initial dissimilarity (requires rng).
        """
        self.euler = wrap_angles(transform.euler)
        self.translation = np.array(transform.translation, dtype=float)
        self.gmat = transform.matrix
        if self.field_mode:
            self.mask_a = None
            self.act_a = None
        else:
            if mask_a is None:
                mask_a = np.ones(self.coords_a.shape[0], dtype=bool)
            self.mask_a = np.array(mask_a, dtype=bool)
            if not self.mask_a.any():
                raise EmptyFieldError("mask of set A is empty")
            self.act_a = np.flatnonzero(self.mask_a)
        self.mask_b = np.array(mask_b, dtype=bool)
        if not self.mask_b.any():
            raise EmptyFieldError("mask of set B is empty")
        self.act_b = np.flatnonzero(self.mask_b)
        for ch in self.channels:
            if self.field_mode:
                ch.coeff_a = ch.ref_coeffs
                ch.w_a = None
                ch.norm_a = 1.0
            else:
                ch.w_a, ch.norm_a = _side_weights(
                    ch.model, self.coords_a, ch.marks_a, self.act_a, ch.kernel_fn
                )
                ch.coeff_a = ch.w_a / ch.norm_a
            ch.w_b, ch.norm_b = _side_weights(
                ch.model, self.coords_b, ch.marks_b, self.act_b, ch.kernel_fn
            )
            ch.coeff_b = ch.w_b / ch.norm_b
            ch.kcross = self._cross(ch, self.gmat, self.translation)
            ch.inner, ch.similarity = self._similarity(
                ch, ch.kcross, self.act_a, ch.coeff_a, self.act_b, ch.coeff_b
            )
        self.lp_mask = self._mask_prior_value(self.mask_a, self.mask_b)
        self.lp_euler = euler_prior_log_density(self.euler)
        if tau is None:
            if rng is None:
                raise ConfigurationError("drawing the initial tau requires an rng")
            sims = [ch.similarity for ch in self.channels]
            self.tau = 1.0
            d0 = self._combined(sims)
            drawn = gibbs_update_tau(
                d0,
                self.hyper.alpha,
                self.hyper.beta,
                rng,
                self.hyper.likelihood_kind,
            )
            self.tau = drawn if drawn is not None else self.hyper.alpha / self.hyper.beta
        else:
            self.tau = float(tau)
        self._refresh_scalars()

    def set_rho(self, rho: float):
        """Move every channel to a new kernel range and rebuild all caches."""
        if rho == self.rho_current:
            return
        self.rho_current = rho
        for ch in self.channels:
            ch.set_model(ch.base_model.with_rho(rho))
            if not self.field_mode:
                ch.w_a, ch.norm_a = _side_weights(
                    ch.model, self.coords_a, ch.marks_a, self.act_a, ch.kernel_fn
                )
                ch.coeff_a = ch.w_a / ch.norm_a
            ch.w_b, ch.norm_b = _side_weights(
                ch.model, self.coords_b, ch.marks_b, self.act_b, ch.kernel_fn
            )
            ch.coeff_b = ch.w_b / ch.norm_b
            ch.kcross = self._cross(ch, self.gmat, self.translation)
            ch.inner, ch.similarity = self._similarity(
                ch, ch.kcross, self.act_a, ch.coeff_a, self.act_b, ch.coeff_b
            )
        self._refresh_scalars()

    def prepare_attempt(self):
        """Reset schedule-driven quantities to their iteration-1 values so a
        fresh (re)start is installed under the right kernel range, channel
        weight and temperature."""
        h = self.hyper
        if h.range_schedule is not None:
            rho = h.range_schedule.value(1)
            self.rho_current = rho
            for ch in self.channels:
                ch.set_model(ch.base_model.with_rho(rho))
        self.weight_q = (
            h.weight_schedule.value(1) if h.weight_schedule is not None else h.weight_q
        )
        self.temperature = (
            h.annealing_schedule.value(1) if h.annealing_schedule is not None else 1.0
        )
        self.counters = {}

    def set_transform(self, transform: RigidTransform):
        """Install a new rigid transform (cross terms only)."""
        self.euler = wrap_angles(transform.euler)
        self.translation = np.array(transform.translation, dtype=float)
        self.gmat = transform.matrix
        self.lp_euler = euler_prior_log_density(self.euler)
        for ch in self.channels:
            ch.kcross = self._cross(ch, self.gmat, self.translation)
            ch.inner, ch.similarity = self._similarity(
                ch, ch.kcross, self.act_a, ch.coeff_a, self.act_b, ch.coeff_b
            )
        self._refresh_scalars()

    def begin_iteration(self, iteration: int):
        """Apply range/weight/annealing schedules for this iteration."""
        h = self.hyper
        if h.range_schedule is not None:
            self.set_rho(h.range_schedule.value(iteration))
        if h.weight_schedule is not None:
            wq = h.weight_schedule.value(iteration)
            if wq != self.weight_q:
                self.weight_q = wq
                self._refresh_scalars()
        if h.annealing_schedule is not None:
            self.temperature = h.annealing_schedule.value(iteration)

    # -- MH blocks ---------------------------------------------------------

    def _count(self, block: str, accepted: bool):
        c = self.counters.setdefault(block, [0, 0])
        c[1] += 1
        c[0] += int(accepted)

    def _accept(self, rng: np.random.Generator, delta: float) -> bool:
        # symmetric proposals: accept with min(1, exp(delta / T))
        if delta == -np.inf:
            rng.uniform()
            return False
        if self.log_lik == -np.inf and delta == np.inf:
            rng.uniform()
            return True
        return math.log(rng.uniform()) < delta / self.temperature

    def step_rigid(self, rng: np.random.Generator, block: str, scale: float = 1.0) -> bool:
        """Gaussian random-walk proposal on all rotation angles or all
        translation entries (one block)."""
        if block == "rotation":
            step = rng.standard_normal(self.euler.shape[0])
            euler_new = wrap_angles(
                self.euler + self.hyper.proposal_sd_rotation * scale * step
            )
            translation_new = self.translation
            lp_euler_new = euler_prior_log_density(euler_new)
            gmat_new = rotation_matrix(euler_new)
        elif block == "translation":
            step = rng.standard_normal(self.m)
            euler_new = self.euler
            translation_new = (
                self.translation + self.hyper.proposal_sd_translation * scale * step
            )
            lp_euler_new = self.lp_euler
            gmat_new = self.gmat
        else:
            raise ValueError(f"unknown rigid block {block!r}")
        kcross_new = []
        sims_new = []
        inners_new = []
        for ch in self.channels:
            k = self._cross(ch, gmat_new, translation_new)
            inner, sim = self._similarity(
                ch, k, self.act_a, ch.coeff_a, self.act_b, ch.coeff_b
            )
            kcross_new.append(k)
            inners_new.append(inner)
            sims_new.append(sim)
        d_new = self._combined(sims_new)
        ll_new = log_likelihood(d_new, self.tau, self.hyper.likelihood_kind)
        delta = (ll_new + lp_euler_new) - (self.log_lik + self.lp_euler)
        if np.isnan(delta):  # both -inf
            delta = -np.inf
        accepted = self._accept(rng, delta)
        if accepted:
            self.euler = euler_new
            self.translation = np.asarray(translation_new, dtype=float)
            self.gmat = gmat_new
            self.lp_euler = lp_euler_new
            for ch, k, inner, sim in zip(self.channels, kcross_new, inners_new, sims_new):
                ch.kcross = k
                ch.inner = inner
                ch.similarity = sim
            self.dissimilarity = d_new
            self.log_lik = ll_new
            self.log_posterior = ll_new + self.lp_tau + self.lp_mask + self.lp_euler
        self._count(block, accepted)
        return accepted

    def step_tau(self, rng: np.random.Generator) -> bool:
        drawn = gibbs_update_tau(
            self.dissimilarity,
            self.hyper.alpha,
            self.hyper.beta,
            rng,
            self.hyper.likelihood_kind,
            self.temperature,
        )
        if drawn is None:
            return False
        self.tau = drawn
        self._refresh_scalars()
        return True

    def step_mask(self, rng: np.random.Generator, side: str) -> bool:
        """Single-entry flip proposal on one mask; flips emptying the mask
        are rejected outright."""
        if side == "a":
            if self.field_mode:
                raise ConfigurationError("the reference field has no mask")
            mask, act, coords = self.mask_a, self.act_a, self.coords_a
        elif side == "b":
            mask, act, coords = self.mask_b, self.act_b, self.coords_b
        else:
            raise ValueError(f"unknown mask side {side!r}")
        block = f"mask_{side}"
        idx = int(rng.integers(mask.shape[0]))
        mask_new = mask.copy()
        mask_new[idx] = not mask_new[idx]
        if not mask_new.any():
            self._count(block, False)
            return False
        act_new = np.flatnonzero(mask_new)
        sides_new = []
        sims_new = []
        inners_new = []
        try:
            for ch in self.channels:
                marks = ch.marks_a if side == "a" else ch.marks_b
                w, norm = _side_weights(ch.model, coords, marks, act_new)
                coeff = w / norm
                if side == "a":
                    inner, sim = self._similarity(
                        ch, ch.kcross, act_new, coeff, self.act_b, ch.coeff_b
                    )
                else:
                    inner, sim = self._similarity(
                        ch, ch.kcross, self.act_a, ch.coeff_a, act_new, coeff
                    )
                sides_new.append((w, norm, coeff))
                inners_new.append(inner)
                sims_new.append(sim)
        except DegenerateFieldError:
            self._count(block, False)
            return False
        if side == "a":
            lp_mask_new = self._mask_prior_value(mask_new, self.mask_b)
        else:
            lp_mask_new = self._mask_prior_value(self.mask_a, mask_new)
        d_new = self._combined(sims_new)
        ll_new = log_likelihood(d_new, self.tau, self.hyper.likelihood_kind)
        delta = (ll_new + lp_mask_new) - (self.log_lik + self.lp_mask)
        if np.isnan(delta):
            delta = -np.inf
        accepted = self._accept(rng, delta)
        if accepted:
            if side == "a":
                self.mask_a, self.act_a = mask_new, act_new
                for ch, (w, norm, coeff), inner, sim in zip(
                    self.channels, sides_new, inners_new, sims_new
                ):
                    ch.w_a, ch.norm_a, ch.coeff_a = w, norm, coeff
                    ch.inner, ch.similarity = inner, sim
            else:
                self.mask_b, self.act_b = mask_new, act_new
                for ch, (w, norm, coeff), inner, sim in zip(
                    self.channels, sides_new, inners_new, sims_new
                ):
                    ch.w_b, ch.norm_b, ch.coeff_b = w, norm, coeff
                    ch.inner, ch.similarity = inner, sim
            self.lp_mask = lp_mask_new
            self.dissimilarity = d_new
            self.log_lik = ll_new
            self.log_posterior = ll_new + self.lp_tau + self.lp_mask + self.lp_euler
        self._count(block, accepted)
        return accepted

    # -- snapshots ---------------------------------------------------------

    def _channel_score(self, ch: _Channel) -> CarboScore:
        if self.field_mode:
            return CarboScore.from_inner(ch.inner, 1.0, 1.0)
        return CarboScore.from_inner(
            ch.inner * ch.norm_a * ch.norm_b, ch.norm_a, ch.norm_b
        )

    def snapshot(self, iteration: int = 0) -> ChainState:
        scores = tuple(self._channel_score(ch) for ch in self.channels)
        if len(scores) == 1:
            carbo = scores[0]
        else:
            carbo = CarboScore.from_dissimilarity(self.dissimilarity)
        transform = RigidTransform(self.euler.copy(), self.translation.copy())
        return ChainState(
            transform=transform,
            mask_a=None if self.mask_a is None else self.mask_a.copy(),
            mask_b=self.mask_b.copy(),
            tau=self.tau,
            carbo=carbo,
            channel_scores=scores,
            log_posterior=self.log_posterior,
            iteration=iteration,
        )

    def evaluate(
        self, transform: RigidTransform, mask_a, mask_b, tau: float, iteration: int = 0
    ) -> ChainState:
        """Full recompute of a ChainState at arbitrary parameters, leaving
        the engine installed at that state."""
        self.install_state(transform, mask_a, mask_b, tau)
        return self.snapshot(iteration)

    def acceptance_rates(self) -> dict[str, float]:
        return {
            block: (acc / prop if prop else np.nan)
            for block, (acc, prop) in sorted(self.counters.items())
        }


def mh_step_rigid(
    state: ChainState,
    engine: PairEngine,
    rng: np.random.Generator,
    block: str = "rotation",
    scale: float = 1.0,
    temperature: float = 1.0,
) -> ChainState:
    """One Metropolis-Hastings rigid-block update starting from `state`."""
    engine.install_state(state.transform, state.mask_a, state.mask_b, state.tau)
    engine.temperature = temperature
    engine.step_rigid(rng, block, scale)
    return engine.snapshot(state.iteration + 1)


def mh_step_mask(
    state: ChainState,
    engine: PairEngine,
    rng: np.random.Generator,
    which_set: str,
    temperature: float = 1.0,
) -> ChainState:
    """One single-entry mask-flip update starting from `state`."""
    engine.install_state(state.transform, state.mask_a, state.mask_b, state.tau)
    engine.temperature = temperature
    engine.step_mask(rng, which_set)
    return engine.snapshot(state.iteration + 1)


def _trace_columns(m: int) -> tuple[str, ...]:
    names = ["iteration"]
    names += [f"theta_{i + 1}" for i in range(n_euler_angles(m))]
    names += [f"gamma_{i + 1}" for i in range(m)]
    names += [
        "tau",
        "carbo_similarity",
        "carbo_dissimilarity",
        "n_unmasked_a",
        "n_unmasked_b",
        "log_posterior",
    ]
    return tuple(names)


class _RunAccumulators:
    """Per-attempt trace rows, MAP tracking and posterior-mean sums."""

    def __init__(self, engine: PairEngine):
        self.engine = engine
        self.rows: list[list[float]] = []
        self.best: ChainState | None = None
        self.n_angles = engine.euler.shape[0]
        self.sin_sum = np.zeros(self.n_angles)
        self.cos_sum = np.zeros(self.n_angles)
        self.translation_sum = np.zeros(engine.m)
        self.tau_sum = 0.0
        self.incl_a = (
            None
            if engine.mask_a is None
            else np.zeros(engine.coords_a.shape[0])
        )
        self.incl_b = np.zeros(engine.coords_b.shape[0])
        self.n_acc = 0

    def record(self, iteration: int, eligible: bool, thin: int):
        eng = self.engine
        if eligible:
            self.n_acc += 1
            self.sin_sum += np.sin(eng.euler)
            self.cos_sum += np.cos(eng.euler)
            self.translation_sum += eng.translation
            self.tau_sum += eng.tau
            if self.incl_a is not None:
                self.incl_a += eng.mask_a
            self.incl_b += eng.mask_b
            if self.best is None or eng.log_posterior > self.best.log_posterior:
                self.best = eng.snapshot(iteration)
        if iteration % thin == 0:
            sim = (
                eng.channels[0].similarity
                if len(eng.channels) == 1
                else (1.0 - eng.dissimilarity) / (1.0 + eng.dissimilarity)
                if np.isfinite(eng.dissimilarity)
                else -1.0
            )
            row = [float(iteration)]
            row += list(eng.euler)
            row += list(eng.translation)
            row += [
                eng.tau,
                sim,
                eng.dissimilarity,
                float(0 if eng.mask_a is None else eng.mask_a.sum()),
                float(eng.mask_b.sum()),
                eng.log_posterior,
            ]
            self.rows.append(row)


def _mean_mask(inclusion: np.ndarray | None, n: int) -> np.ndarray | None:
    if inclusion is None:
        return None
    if n == 0:
        return None
    freq = inclusion / n
    mask = freq >= 0.5
    if not mask.any():
        mask[int(np.argmax(freq))] = True
    return mask


def _run_chain(
    engine: PairEngine,
    hyper: Hyperparameters,
    rng: np.random.Generator,
    init: InitSpec | None,
    fixed_init: tuple[RigidTransform, np.ndarray | None, np.ndarray] | None = None,
) -> AlignmentResult:
    n = hyper.n_iterations
    map_from = max(hyper.effective_burn_in, hyper.settle_iteration)
    if map_from >= n:
        raise ConfigurationError(
            "no post-burn-in, post-schedule iterations remain for MAP tracking"
        )
    k_a = None if engine.field_mode else engine.coords_a.shape[0]
    k_b = engine.coords_b.shape[0]
    restarts = 0
    failed = False
    while True:
        engine.prepare_attempt()
        if fixed_init is not None:
            t0, mask_a0, mask_b0 = fixed_init
            engine.install_state(t0, mask_a0, mask_b0, tau=hyper.tau_init, rng=rng)
        else:
            for _ in range(100):
                t0 = init.sample_transform(rng, engine.m)
                mask_a0 = None if k_a is None else init.sample_mask(rng, k_a)
                mask_b0 = init.sample_mask(rng, k_b)
                try:
                    engine.install_state(
                        t0, mask_a0, mask_b0, tau=hyper.tau_init, rng=rng
                    )
                    break
                except DegenerateFieldError:
                    continue
            else:
                raise DegenerateFieldError(
                    "could not draw a nondegenerate initial mask in 100 tries"
                )
        acc = _RunAccumulators(engine)
        do_restart = False
        for i in range(1, n + 1):
            engine.begin_iteration(i)
            scale = 1.0
            if hyper.escape_period and i % hyper.escape_period == 0:
                scale = hyper.escape_scale
            if hyper.update_rigid:
                engine.step_rigid(rng, "rotation", scale)
                engine.step_rigid(rng, "translation", scale)
            if hyper.update_tau:
                engine.step_tau(rng)
            if hyper.update_masks:
                if not engine.field_mode:
                    engine.step_mask(rng, "a")
                engine.step_mask(rng, "b")
            acc.record(i, i > map_from, hyper.thin)
            if (
                hyper.restart_check_iter is not None
                and i == hyper.restart_check_iter
                and engine.dissimilarity > hyper.restart_threshold
            ):
                if restarts < hyper.max_restarts:
                    restarts += 1
                    do_restart = True
                    break
                failed = True
        if not do_restart:
            break
    final_state = engine.snapshot(n)
    map_state = acc.best if acc.best is not None else final_state
    n_acc = max(acc.n_acc, 1)
    mean_euler = wrap_angles(np.arctan2(acc.sin_sum / n_acc, acc.cos_sum / n_acc))
    mean_transform = RigidTransform(mean_euler, acc.translation_sum / n_acc)
    mean_tau = acc.tau_sum / n_acc if acc.n_acc else final_state.tau
    incl_a = None if acc.incl_a is None else acc.incl_a / n_acc
    incl_b = acc.incl_b / n_acc
    mean_mask_a = _mean_mask(acc.incl_a, n_acc)
    mean_mask_b = _mean_mask(acc.incl_b, n_acc)
    if mean_mask_b is None:
        mean_mask_b = final_state.mask_b.copy()
    acceptance = engine.acceptance_rates()
    plug_in = map_state.carbo.dissimilarity
    try:
        mean_state = engine.evaluate(mean_transform, mean_mask_a, mean_mask_b, mean_tau)
        plug_in_mean = mean_state.carbo.dissimilarity
    except (DegenerateFieldError, EmptyFieldError):
        plug_in_mean = np.inf
    # leave the engine installed at the MAP so callers can inspect it
    engine.install_state(
        map_state.transform, map_state.mask_a, map_state.mask_b, map_state.tau
    )
    traces = np.array(acc.rows, dtype=float)
    return AlignmentResult(
        map_state=map_state,
        final_state=final_state,
        plug_in_distance=plug_in,
        plug_in_distance_mean=plug_in_mean,
        mean_transform=mean_transform,
        mean_mask_a=mean_mask_a,
        mean_mask_b=mean_mask_b,
        mask_inclusion_means_a=incl_a,
        mask_inclusion_means_b=incl_b,
        mean_tau=mean_tau,
        traces=traces,
        trace_columns=_trace_columns(engine.m),
        acceptance_rates=acceptance,
        n_restarts=restarts,
        failed=failed,
        n_iterations=n,
    )


def run_pairwise_alignment(
    set_a,
    set_b,
    models,
    hyper: Hyperparameters,
    init: InitSpec,
    rng_seed,
) -> AlignmentResult:
    """Align point set B onto point set A by MCMC.

    set_a/set_b are MarkedPointSets (or per-channel sequences sharing
    coordinates) and models the matching CovarianceModel(s).  Restarts,
    escape moves and schedules follow `hyper`; the chain start (and any
    restart) is drawn from `init`.  Identical seeds give identical traces.
    """
    engine = PairEngine.for_pair(set_a, set_b, models, hyper)
    rng = np.random.default_rng(rng_seed)
    return _run_chain(engine, hyper, rng, init)


def run_reference_alignment(
    ref_coords,
    ref_coeffs,
    movable: MarkedPointSet,
    model: CovarianceModel,
    hyper: Hyperparameters,
    initial_transform: RigidTransform,
    initial_mask,
    rng,
) -> AlignmentResult:
    """Align a movable set onto a frozen reference field (GPA inner step).

    The chain starts from the supplied transform/mask rather than a random
    draw, and only the movable mask is updated.
    """
    engine = PairEngine.for_reference_field(ref_coords, ref_coeffs, movable, model, hyper)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    mask = np.asarray(initial_mask, dtype=bool)
    return _run_chain(
        engine, hyper, rng, None, fixed_init=(initial_transform, None, mask)
    )


# -- external formats ------------------------------------------------------


def write_trace(path, result: AlignmentResult, header_lines=()):
    """Delimited trace: one row per thinned iteration.

    Optional header lines are written first as '#' comments (the CLI uses
    them to embed the run configuration and seed).
    """
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(result.trace_columns) + "\n")
        for row in result.traces:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _transform_dict(t: RigidTransform) -> dict:
    return {
        "euler_radians": [float(v) for v in t.euler],
        "euler_degrees": [float(np.degrees(v)) for v in t.euler],
        "translation": [float(v) for v in t.translation],
    }


def _state_dict(s: ChainState) -> dict:
    return {
        "transform": _transform_dict(s.transform),
        "mask_a": None if s.mask_a is None else [int(v) for v in s.mask_a],
        "mask_b": [int(v) for v in s.mask_b],
        "tau": float(s.tau),
        "carbo_similarity": float(s.carbo.similarity),
        "carbo_dissimilarity": float(s.carbo.dissimilarity),
        "log_posterior": float(s.log_posterior),
        "iteration": int(s.iteration),
    }


def result_to_dict(result: AlignmentResult) -> dict:
    return {
        "map_state": _state_dict(result.map_state),
        "final_state": _state_dict(result.final_state),
        "plug_in_distance": float(result.plug_in_distance),
        "plug_in_distance_mean": float(result.plug_in_distance_mean),
        "mean_transform": _transform_dict(result.mean_transform),
        "mean_mask_a": None
        if result.mean_mask_a is None
        else [int(v) for v in result.mean_mask_a],
        "mean_mask_b": [int(v) for v in result.mean_mask_b],
        "mask_inclusion_means_a": None
        if result.mask_inclusion_means_a is None
        else [float(v) for v in result.mask_inclusion_means_a],
        "mask_inclusion_means_b": [float(v) for v in result.mask_inclusion_means_b],
        "mean_tau": float(result.mean_tau),
        "acceptance_rates": {k: float(v) for k, v in result.acceptance_rates.items()},
        "n_restarts": int(result.n_restarts),
        "failed": bool(result.failed),
        "n_iterations": int(result.n_iterations),
    }


def write_result(path, result: AlignmentResult, extra: dict | None = None):
    payload = dict(extra or {})
    payload.update(result_to_dict(result))
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
