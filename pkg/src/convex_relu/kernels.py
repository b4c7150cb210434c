"""1-D kernel interpolation: the data-adaptive ReLU kernel and the NTK.

The adaptive route fits a minimum-l1 combination of the hinge atoms kinked
at the training points (the kernel a trained two-layer ReLU network actually
induces); the NTK route solves the closed-form infinite-width kernel system
with the minimum-l2 weights. The two interpolate the same data but differ
between samples: the adaptive fit is piecewise linear with kinks only at
training points, the NTK fit is smooth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import InvalidInput, SingularKernel
from .geometry import enumerate_extremes_1d
from .linalg import relu
from .solvers import SolverConfig, basis_pursuit

KINDS = ("adaptive-relu-l1", "ntk-l2")

GRID_POINTS = 1000
GRID_MARGIN = 0.5


def _as_points(a):
    a = np.asarray(a, dtype=float).ravel()
    if a.size < 1 or not np.all(np.isfinite(a)):
        raise InvalidInput("training points must be a nonempty finite vector")
    return a


def adaptive_kernel_matrix(a) -> np.ndarray:
    """Data-adaptive ReLU kernel matrix K_ij = (a_i - a_j)_+ (zero diagonal)."""
    a = _as_points(a)
    return relu(a[:, None] - a[None, :])


def _ntk_gram(X, Z):
    """NTK values K(x_i, z_j) = ||x|| ||z|| kappa(cos angle) for row points.

    kappa(u) = u kappa0(u) + kappa1(u) with kappa0(u) = (pi - arccos u)/pi
    and kappa1(u) = (u (pi - arccos u) + sqrt(1 - u^2))/pi.
    """
    nx = np.linalg.norm(X, axis=1)[:, None]
    nz = np.linalg.norm(Z, axis=1)[None, :]
    norms = nx * nz
    u = np.clip((X @ Z.T) / norms, -1.0, 1.0)
    angle = np.pi - np.arccos(u)
    kappa0 = angle / np.pi
    kappa1 = (u * angle + np.sqrt(np.maximum(1.0 - u * u, 0.0))) / np.pi
    return norms * (u * kappa0 + kappa1)


def _scalar_rows(a):
    """Scalar inputs as row points; zeros perturbed by 1e-12 (cos undefined)."""
    return np.where(a == 0.0, 1e-12, a)[:, None]


def ntk_kernel_matrix(a) -> np.ndarray:
    """Closed-form 1-D NTK matrix (symmetric, PSD up to a -1e-8 floor)."""
    a = _as_points(a)
    K = _ntk_gram(_scalar_rows(a), _scalar_rows(a))
    return 0.5 * (K + K.T)


@dataclass
class KernelFit:
    """An interpolating kernel predictor.

    ``weights`` holds the expansion coefficients: one per training point for
    the NTK system, one per signed hinge atom (two per distinct training
    point) for the adaptive dictionary. ``predict`` accepts a scalar or an
    array of inputs.
    """

    kind: str
    train_points: np.ndarray
    weights: np.ndarray
    predict: Callable = field(repr=False)


def _check_distinct(a):
    if np.unique(a).size != a.size:
        raise SingularKernel("duplicate training points make the kernel system singular")


def _lifted_rows(a):
    return np.column_stack([a, np.ones_like(a)])


def _fit_ntk(a, y):
    """Solve the square NTK system, lifting to (a, 1) when it degenerates.

    On raw scalars the homogeneous kernel has rank at most two (the cosine
    is exactly +/-1), so three or more generic points make it singular and
    uninterpolable; the lift applies the same formula to the points (a_i, 1),
    where the kernel is positive definite for distinct inputs and produces
    the smooth curves the comparison is about. The scalar route is kept for
    the sizes it can actually solve.
    """
    for rows in (_scalar_rows(a), _lifted_rows(a)):
        K = _ntk_gram(rows, rows)
        K = 0.5 * (K + K.T)
        sv = np.linalg.svd(K, compute_uv=False)
        if sv[0] > 0.0 and sv[-1] > 1e-10 * sv[0]:
            w = np.linalg.solve(K, y)

            def predict(x, rows=rows, w=w, lifted=rows.shape[1] == 2):
                x = np.asarray(x, dtype=float)
                pts = np.atleast_1d(x).ravel()
                q = _lifted_rows(pts) if lifted else _scalar_rows(pts)
                out = _ntk_gram(q, rows) @ w
                return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)

            return w, predict
    raise SingularKernel("NTK matrix is numerically singular")


def _fit_adaptive(a, y, cfg):
    atoms = enumerate_extremes_1d(a)
    signs = np.array([float(nrn.u[0]) for nrn in atoms])
    offsets = np.array([float(nrn.b) for nrn in atoms])
    Phi = relu(a[:, None] * signs[None, :] + offsets[None, :])
    w, rep = basis_pursuit(Phi, y, cfg)
    resid = float(np.abs(Phi @ w - y).max())
    if resid > 1e-6 * max(1.0, float(np.abs(y).max())):
        raise SingularKernel("adaptive hinge dictionary failed to reach the targets")

    def predict(x):
        x = np.asarray(x, dtype=float)
        feats = relu(np.atleast_1d(x).ravel()[:, None] * signs[None, :] + offsets[None, :])
        out = feats @ w
        return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)

    return w, predict


def fit(kind: str, a, y, cfg: SolverConfig | None = None) -> KernelFit:
    """Interpolate (a_i, y_i) with the requested kernel expansion.

    "ntk-l2" solves the square NTK system (minimum-l2 weights since the
    matrix is nonsingular); "adaptive-relu-l1" solves minimum-l1 weights over
    the signed hinge atoms kinked at the training points, so the predictor is
    piecewise linear with kinks only there. Both interpolate within 1e-6.
    """
    if kind not in KINDS:
        raise InvalidInput("kind must be 'adaptive-relu-l1' or 'ntk-l2'")
    a = _as_points(a)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != a.shape or not np.all(np.isfinite(y)):
        raise InvalidInput("targets must be a finite vector matching the points")
    _check_distinct(a)
    if kind == "ntk-l2":
        w, predict = _fit_ntk(a, y)
    else:
        w, predict = _fit_adaptive(a, y, cfg)
    return KernelFit(kind=kind, train_points=a.copy(), weights=w, predict=predict)


def comparison_grid(a) -> np.ndarray:
    """The 1000-point uniform diagnostic grid spanning [min - 0.5, max + 0.5]."""
    a = _as_points(a)
    return np.linspace(float(a.min()) - GRID_MARGIN, float(a.max()) + GRID_MARGIN,
                       GRID_POINTS)


def save_kernel_csv(path, x, y_adaptive, y_ntk, y_gd=None) -> None:
    """Write fit curves as CSV columns x, y_adaptive, y_ntk[, y_gd]."""
    cols = [np.asarray(c, dtype=float).ravel() for c in
            ([x, y_adaptive, y_ntk] + ([y_gd] if y_gd is not None else []))]
    if any(c.shape != cols[0].shape for c in cols):
        raise InvalidInput("curve columns must share the grid length")
    header = "x,y_adaptive,y_ntk" + (",y_gd" if y_gd is not None else "")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{val:.17g}" for val in row) + "\n")
