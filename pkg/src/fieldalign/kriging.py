"""Simple kriging: weight computation, masked field prediction, RKHS norms.

A predicted field is Zhat(x) = sum over unmasked points i of
w_i sigma(x_i - x) with weights solving Sigma w = z on the unmasked
sub-Gram.  The squared RKHS norm is w' Sigma w = w' z, cached at build time
together with the Cholesky factor of the sub-Gram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .covariance import CovarianceModel, gram_cholesky, kernel_cross
from .geometry import MarkedPointSet, RigidTransform, apply_transform


class EmptyFieldError(ValueError):
    """Every point is masked out; the predicted field is undefined."""


class DegenerateFieldError(ValueError):
    """The masked field has zero RKHS norm (all effective marks zero)."""


def solve_weights(gram_chol_lower: np.ndarray, marks) -> np.ndarray:
    """Solve Sigma w = z given the lower Cholesky factor of Sigma."""
    z = np.asarray(marks, dtype=float)
    return cho_solve((gram_chol_lower, True), z)


def kriging_weights(marks, gram: np.ndarray) -> np.ndarray:
    """Weight vector w = Sigma^{-1} z via an SPD factorization (no explicit
    inverse); raises on a singular Gram matrix."""
    g = np.asarray(gram, dtype=float)
    try:
        chol = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(f"singular Gram matrix: {err}") from None
    return solve_weights(chol, marks)


@dataclass(frozen=True, eq=False)
class PredictedField:
    """Kriged (masked) prediction of the reference field from one point set.

    source_coords holds all k source positions (post-transform); weights has
    one entry per unmasked point; norm is the RKHS norm of the masked field.
    Instances are immutable and safe to share across threads.
    """

    source_coords: np.ndarray
    mask: np.ndarray
    weights: np.ndarray
    model: CovarianceModel
    norm: float
    chol: np.ndarray
    mean: float = 0.0

    def __post_init__(self):
        for name in ("source_coords", "mask", "weights", "chol"):
            a = np.asarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def k(self) -> int:
        return self.source_coords.shape[0]

    @property
    def dimension(self) -> int:
        return self.source_coords.shape[1]

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())

    @property
    def active_coords(self) -> np.ndarray:
        return self.source_coords[self.mask]

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.weights / self.norm

    def predict(self, x) -> float | np.ndarray:
        """Evaluate the field at one point (m,) or a batch (n, m)."""
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = kernel_cross(self.model, pts, self.active_coords) @ self.weights
        out = out + self.mean
        return float(out[0]) if single else out

    def transformed(self, transform: RigidTransform) -> "PredictedField":
        """Same field with rigidly moved sources; weights and norm carry over
        unchanged because the kernel is isotropic."""
        return PredictedField(
            apply_transform(transform, self.source_coords),
            self.mask,
            self.weights,
            self.model,
            self.norm,
            self.chol,
            self.mean,
        )


def build_field(
    points: MarkedPointSet,
    mask=None,
    model: CovarianceModel | None = None,
    mean: float = 0.0,
    jitter: float = 0.0,
) -> PredictedField:
    """Krige a (masked) point set into a PredictedField.

    mask entries select contributing points (default: all).  The optional
    `mean` is subtracted from the marks before solving and added back at
    prediction time; it defaults to zero per the simple-kriging model.
    """
    if model is None:
        raise ValueError("a CovarianceModel is required")
    if mask is None:
        mask = np.ones(points.k, dtype=bool)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != (points.k,):
        raise ValueError("mask length must equal the number of points")
    if not mask.any():
        raise EmptyFieldError("all points are masked out")
    sub_coords = points.coords[mask]
    sub_marks = points.marks[mask] - mean
    chol, _ = gram_cholesky(model, sub_coords, jitter=jitter)
    weights = solve_weights(chol, sub_marks)
    norm_sq = float(weights @ sub_marks)
    if norm_sq <= 0.0:
        raise DegenerateFieldError("masked field has zero RKHS norm")
    return PredictedField(
        points.coords, mask, weights, model, float(np.sqrt(norm_sq)), chol, mean
    )


def predict_field(field: PredictedField, x) -> float | np.ndarray:
    """Evaluate a predicted field at x (point or batch of points)."""
    return field.predict(x)


def half_solve(chol_lower: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Solve L y = vec for the lower factor L (used for norm computations)."""
    return solve_triangular(chol_lower, vec, lower=True)
