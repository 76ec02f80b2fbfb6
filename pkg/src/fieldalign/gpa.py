"""Stochastic field GPA: simultaneous alignment of n marked point sets.

Each set is kriged into a normalized field (unit RKHS norm); the multiple
Carbo criterion sums the pairwise inner products of these fields at the
current transforms.  Optimization proceeds by repeated leave-one-out
superpositions: each set in turn is aligned, by a short high-precision MCMC
chain, onto the normalized mean field of the others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceModel, kernel_cross
from .geometry import MarkedPointSet, RigidTransform, apply_transform
from .kriging import EmptyFieldError, build_field
from .mcmc import (
    AlignmentResult,
    Hyperparameters,
    InitSpec,
    run_pairwise_alignment,
    run_reference_alignment,
)


@dataclass(frozen=True, eq=False)
class MeanField:
    """Scaled sum of normalized member fields at fixed transforms.

    Evaluation at x is scale * sum_j sum_l w~_l^j sigma(||T_j(x_l^j) - x||)
    over the included sets j and their unmasked points l.
    """

    component_coords: tuple[np.ndarray, ...]
    component_coeffs: tuple[np.ndarray, ...]
    model: CovarianceModel
    scale: float

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        coords = np.vstack(self.component_coords)
        coeffs = np.concatenate(
            [self.scale * c for c in self.component_coeffs]
        )
        return coords, coeffs

    def evaluate(self, x) -> float | np.ndarray:
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        coords, coeffs = self.stacked()
        out = kernel_cross(self.model, pts, coords) @ coeffs
        return float(out[0]) if single else out


@dataclass(eq=False)
class GpaState:
    """Transforms, masks and criterion value of a multiple superposition."""

    transforms: list[RigidTransform]
    masks: list[np.ndarray]
    multi_carbo: float
    iteration: int
    converged: bool
    criterion_history: list[float]


@dataclass(frozen=True)
class GpaConfig:
    """Step-1 pairwise profile, inner-chain profile and loop controls."""

    step1_hyper: Hyperparameters
    step1_init: InitSpec
    refine_hyper: Hyperparameters
    tol: float = 1e-4
    max_passes: int = 50

    def __post_init__(self):
        if self.max_passes < 1:
            raise ValueError("at least one leave-one-out pass is required")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


def _normalized_coeff(ps: MarkedPointSet, mask, model: CovarianceModel) -> np.ndarray:
    f = build_field(ps, mask=mask, model=model)
    return f.normalized_weights


def _pair_inner(
    sets, transforms, coeffs, active, model: CovarianceModel, i: int, j: int
) -> float:
    xi = apply_transform(transforms[i], sets[i].coords[active[i]])
    xj = apply_transform(transforms[j], sets[j].coords[active[j]])
    return float(coeffs[i] @ kernel_cross(model, xi, xj) @ coeffs[j])


def _prepare(sets, masks, model):
    active = [np.asarray(m).astype(bool) for m in masks]
    for a in active:
        if not a.any():
            raise EmptyFieldError("every set needs at least one unmasked point")
    coeffs = [
        _normalized_coeff(ps, mask, model) for ps, mask in zip(sets, active)
    ]
    return active, coeffs


def multi_carbo(sets, transforms, masks, model: CovarianceModel) -> float:
    """Goodness of fit of a multiple superposition: the sum over unordered
    pairs of normalized-field inner products at the current transforms."""
    n = len(sets)
    if n < 2:
        raise ValueError("multiple alignment needs at least two sets")
    active, coeffs = _prepare(sets, masks, model)
    total = 0.0
    for i in range(n - 1):
        for j in range(i + 1, n):
            total += _pair_inner(sets, transforms, coeffs, active, model, i, j)
    return total


def leave_one_out_similarity(
    i: int, sets, transforms, masks, model: CovarianceModel
) -> float:
    """Inner product of the i-th normalized field with the normalized mean
    field of the others; summing over i recovers 2 C / (n - 1)."""
    n = len(sets)
    if n < 2:
        raise ValueError("multiple alignment needs at least two sets")
    active, coeffs = _prepare(sets, masks, model)
    total = 0.0
    for j in range(n):
        if j != i:
            total += _pair_inner(sets, transforms, coeffs, active, model, i, j)
    return total / (n - 1)


def mean_field_excluding(
    i: int, sets, transforms, masks, model: CovarianceModel
) -> MeanField:
    """Normalized mean field over all sets but the i-th."""
    n = len(sets)
    indices = [j for j in range(n) if j != i]
    return group_mean_field(sets, transforms, masks, model, indices)


def group_mean_field(
    sets, transforms, masks, model: CovarianceModel, group_indices
) -> MeanField:
    """Mean of the normalized member fields of a group at fixed transforms."""
    indices = list(group_indices)
    if not indices:
        raise ValueError("the group must contain at least one set")
    coords = []
    coeffs = []
    for j in indices:
        mask = np.asarray(masks[j]).astype(bool)
        if not mask.any():
            raise EmptyFieldError(f"set {j} has an empty mask")
        coords.append(apply_transform(transforms[j], sets[j].coords[mask]))
        coeffs.append(_normalized_coeff(sets[j], mask, model))
    return MeanField(
        tuple(coords), tuple(coeffs), model, scale=1.0 / len(indices)
    )


def run_field_gpa(
    sets,
    model: CovarianceModel,
    config: GpaConfig,
    rng_seed,
) -> tuple[GpaState, list[AlignmentResult]]:
    """Stochastic field GPA.

    Step 1 superimposes every set pairwise onto the smallest one (by point
    count, ties broken by input order).  Each subsequent pass runs one
    short high-precision chain per set against the leave-one-out normalized
    mean field, then recomputes the multiple Carbo index; the loop stops
    when the absolute improvement drops to `tol` or `max_passes` is hit.
    """
    n = len(sets)
    if n < 2:
        raise ValueError("multiple alignment needs at least two sets")
    m = sets[0].dimension
    seeds = np.random.SeedSequence(rng_seed).spawn(n - 1 + config.max_passes * n)
    seed_iter = iter(seeds)

    ref = min(range(n), key=lambda i: (sets[i].k, i))
    transforms: list[RigidTransform] = [RigidTransform.identity(m) for _ in range(n)]
    masks: list[np.ndarray] = [np.ones(s.k, dtype=bool) for s in sets]
    for j in range(n):
        if j == ref:
            continue
        res = run_pairwise_alignment(
            sets[ref], sets[j], model, config.step1_hyper, config.step1_init,
            next(seed_iter),
        )
        transforms[j] = res.map_state.transform
        masks[j] = res.map_state.mask_b.copy()

    criterion = multi_carbo(sets, transforms, masks, model)
    history = [criterion]
    results: list[AlignmentResult] = [None] * n  # type: ignore[list-item]
    passes = 0
    converged = False
    while passes < config.max_passes:
        passes += 1
        for i in range(n):
            mf = mean_field_excluding(i, sets, transforms, masks, model)
            ref_coords, ref_coeffs = mf.stacked()
            res = run_reference_alignment(
                ref_coords,
                ref_coeffs,
                sets[i],
                model,
                config.refine_hyper,
                transforms[i],
                masks[i],
                next(seed_iter),
            )
            transforms[i] = res.map_state.transform
            masks[i] = res.map_state.mask_b.copy()
            results[i] = res
        updated = multi_carbo(sets, transforms, masks, model)
        improvement = abs(updated - criterion)
        criterion = updated
        history.append(criterion)
        if improvement <= config.tol:
            converged = True
            break
    state = GpaState(
        transforms=transforms,
        masks=masks,
        multi_carbo=criterion,
        iteration=passes,
        converged=converged,
        criterion_history=history,
    )
    return state, results
