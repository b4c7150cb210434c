"""Dense linear-algebra primitives: SVD factors, pseudo-inverses, data whitening.

Everything here is a thin, contract-checked layer over ``numpy.linalg``.
The rest of the package treats these as the only entry points to
factorizations so that rank decisions are made in exactly one place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInput, NotWhitenable

RANK_RTOL = 1e-10

TASKS = ("regression", "binary-hinge", "multiclass")


def relu(x):
    """Elementwise positive part."""
    return np.maximum(x, 0.0)


def as_matrix(A, name: str = "A") -> np.ndarray:
    """Validate and return a finite 2-D float array."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise InvalidInput(f"{name} must be a nonempty 2-D matrix")
    if not np.all(np.isfinite(A)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return A


@dataclass(frozen=True)
class Dataset:
    """A data matrix with targets.

    ``y`` holds scalar targets (regression / binary hinge labels in {+1, -1});
    ``Y`` holds vector targets (one row per sample, one-hot for multiclass).
    Exactly one of the two is set.
    """

    A: np.ndarray
    y: np.ndarray | None = None
    Y: np.ndarray | None = None
    task: str = "regression"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "A", as_matrix(self.A))
        if (self.y is None) == (self.Y is None):
            raise InvalidInput("exactly one of y, Y must be given")
        n = self.A.shape[0]
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).ravel()
            if y.shape[0] != n or not np.all(np.isfinite(y)):
                raise InvalidInput("y must be a finite length-n vector")
            object.__setattr__(self, "y", y)
        else:
            Y = as_matrix(self.Y, "Y")
            if Y.shape[0] != n:
                raise InvalidInput("Y must have one row per sample")
            object.__setattr__(self, "Y", Y)
        if self.task not in TASKS:
            raise InvalidInput(f"unknown task {self.task!r}")
        if self.task == "binary-hinge":
            if self.y is None or not np.all(np.isin(self.y, (-1.0, 1.0))):
                raise InvalidInput("binary-hinge needs y with entries in {+1, -1}")
        if self.task == "multiclass":
            Y = self.Y
            if Y is None or not (
                np.all(np.isin(Y, (0.0, 1.0))) and np.all(Y.sum(axis=1) == 1.0)
            ):
                raise InvalidInput("multiclass needs one-hot rows in Y")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def targets(self) -> np.ndarray:
        return self.y if self.y is not None else self.Y


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD truncated at numerical rank: A ~= U_left @ diag(s) @ V_right.T."""

    U_left: np.ndarray
    singular_values: np.ndarray
    V_right: np.ndarray
    r: int

    def reconstruct(self) -> np.ndarray:
        return (self.U_left * self.singular_values) @ self.V_right.T


@dataclass(frozen=True)
class WhitenedDataset:
    """A dataset together with its whitened features.

    ``forward_map`` is the d×d matrix (V Σ⁻¹, zero-padded) sending original
    feature rows to whitened feature rows, so out-of-sample points transform
    the same way the training matrix did.
    """

    base: Dataset
    A_white: np.ndarray
    forward_map: np.ndarray
    rank: int

    def map_points(self, X) -> np.ndarray:
        X = as_matrix(X, "X")
        return X @ self.forward_map


def svd(A) -> SvdFactors:
    """Thin SVD of ``A`` truncated at numerical rank.

    Rank keeps singular values > 1e-10 * sigma_1; all-zero matrices get rank 0.
    """
    A = as_matrix(A)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        r = 0
    else:
        r = int(np.sum(s > RANK_RTOL * s[0]))
    return SvdFactors(U[:, :r], s[:r], Vt[:r].T, r)


def pseudo_inverse(A) -> np.ndarray:
    """Moore–Penrose pseudo-inverse via rank-truncated SVD."""
    f = svd(A)
    if f.r == 0:
        return np.zeros((A.shape[1], A.shape[0]))
    return (f.V_right / f.singular_values) @ f.U_left.T


def whiten(ds: Dataset) -> WhitenedDataset:
    """Whiten a dataset so the new features satisfy A_white @ A_white.T = I.

    Uses the left singular vectors as the whitened matrix; the forward map
    V Σ⁻¹ reproduces it on the training rows and extends to new points.
    """
    f = svd(ds.A)
    if ds.n > f.r:
        raise NotWhitenable(
            f"need n <= rank(A) to whiten: n={ds.n}, rank={f.r}", rank=f.r
        )
    d = ds.d
    forward = np.zeros((d, d))
    forward[:, : f.r] = f.V_right / f.singular_values
    return WhitenedDataset(base=ds, A_white=f.U_left, forward_map=forward, rank=f.r)


def is_whitened(A, tol: float = 1e-6) -> bool:
    """True when AA^T is the identity within Frobenius tolerance ``tol``."""
    A = as_matrix(A)
    G = A @ A.T
    return bool(np.linalg.norm(G - np.eye(A.shape[0])) <= tol)
