"""Unsupervised convolutional features from patch extreme points.

Filters come from the patch cloud itself: every sampled patch is separated
from the convex hull of the others, and the normalized separation residual
becomes a unit-norm filter.  Images are then encoded by max-pooled ReLU
activations of those filters and the output layer is fit with an
l1-penalized least-squares problem, so the whole pipeline is convex and,
given a seed, bit-for-bit reproducible.

Patch covariance here is the uncentered second moment of the (already
per-patch mean-zero) rows; per-patch normalization divides by
sqrt(var + epsilon), so row variances land at var/(var + epsilon) <= 1
rather than exactly 1, and constant patches collapse to zero rows.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConvexReluError, DataFormatError, DegenerateExtreme, InvalidInput
from .geometry import Neuron, extreme_point_basis
from .linalg import relu
from .solvers import SolveReport, SolverConfig, lasso

THREADS_ENV = "CONVEX_RELU_THREADS"


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_ordered(fn, items):
    """Apply fn to items, in parallel when CONVEX_RELU_THREADS > 1.

    Every item is independent and carries its own inputs, so the result is
    identical for any worker count; order is preserved.
    """
    workers = _worker_count()
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _as_images(images) -> np.ndarray:
    arr = np.asarray(images, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.size == 0:
        raise InvalidInput("images must be an n x h x w array")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("images must be finite")
    return arr


def _normalize_rows(rows: np.ndarray, epsilon_norm: float) -> np.ndarray:
    rows = rows - rows.mean(axis=1, keepdims=True)
    return rows / np.sqrt(rows.var(axis=1) + epsilon_norm)[:, None]


def _window_grid(images: np.ndarray, patch: int, stride: int) -> np.ndarray:
    """All patch windows: (n, grid_h, grid_w, patch, patch)."""
    view = np.lib.stride_tricks.sliding_window_view(images, (patch, patch),
                                                    axis=(1, 2))
    return view[:, ::stride, ::stride]


@dataclass
class PatchSet:
    """Rows of flattened, per-patch normalized (optionally whitened) patches."""

    P: np.ndarray
    epsilon_norm: float = 1e-5
    whitened: bool = False
    zca_map: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        if self.P.ndim != 2 or self.P.size == 0:
            raise InvalidInput("patch matrix must be a nonempty 2-D array")
        if not np.all(np.isfinite(self.P)):
            raise InvalidInput("patch matrix must be finite")
        if self.epsilon_norm <= 0.0:
            raise InvalidInput("epsilon_norm must be positive")
        if not self.whitened:
            if np.abs(self.P.mean(axis=1)).max() > 1e-8:
                raise InvalidInput("normalized patch rows must have zero mean")
            if self.P.var(axis=1).max() > 1.0 + 1e-8:
                raise InvalidInput(
                    "normalized patch rows must have variance at most one")


def extract_patches(images, patch: int, stride: int, count: int,
                    seed: int = 0, epsilon_norm: float = 1e-5) -> PatchSet:
    """Sample `count` normalized patches from a stack of grayscale images.

    Positions come from the (patch, stride) window grid of every image;
    sampling is without replacement when enough positions exist and with
    replacement otherwise, always returning exactly `count` rows.
    """
    images = _as_images(images)
    n, h, w = images.shape
    if patch < 1 or patch > min(h, w):
        raise InvalidInput(f"patch size {patch} does not fit {h}x{w} images")
    if stride < 1:
        raise InvalidInput("stride must be at least 1")
    if count < 1:
        raise InvalidInput("count must be at least 1")
    windows = _window_grid(images, patch, stride)
    flat = windows.reshape(-1, patch * patch)
    rng = np.random.default_rng(seed)
    idx = rng.choice(flat.shape[0], size=count, replace=count > flat.shape[0])
    return PatchSet(P=_normalize_rows(flat[idx], epsilon_norm),
                    epsilon_norm=epsilon_norm)


def zca_whiten_patches(ps: PatchSet, eps: float = 0.1) -> PatchSet:
    """Whiten patch rows with the symmetric ridge map V (D + eps I)^-1/2 V^T.

    The output second moment is exactly V diag(lam/(lam + eps)) V^T, so its
    Frobenius distance to the identity is known from the input spectrum; the
    computed rows are checked against that bound before returning.
    """
    if eps <= 0.0:
        raise InvalidInput("whitening eps must be positive")
    P = ps.P
    cov = P.T @ P / P.shape[0]
    lam, V = np.linalg.eigh(cov)
    lam = np.clip(lam, 0.0, None)
    zca_map = (V * (1.0 / np.sqrt(lam + eps))) @ V.T
    out = P @ zca_map
    cov_out = out.T @ out / out.shape[0]
    predicted = float(np.sqrt(((eps / (lam + eps)) ** 2).sum()))
    actual = float(np.linalg.norm(cov_out - np.eye(cov.shape[0])))
    if actual > predicted + 1e-7 * (1.0 + np.linalg.norm(cov)):
        raise ConvexReluError(
            f"whitening self-check failed ({actual} > {predicted})")
    return PatchSet(P=out, epsilon_norm=ps.epsilon_norm, whitened=True,
                    zca_map=zca_map)


def filters_from_patches(ps: PatchSet, cfg: SolverConfig | None = None,
                         competitors: int | None = None,
                         seed: int = 0) -> list[Neuron]:
    """One unit-norm filter per patch that sits outside the hull of the rest.

    Interior patches are degenerate and silently dropped; exact duplicate
    rows are collapsed to their first occurrence beforehand (a repeated point
    adds nothing to the hull, and leaving it in would zero out its twin's
    residual too).  Callers can recover the total dropped count as
    len(ps.P) - len(filters).  When `competitors` caps the hull, each patch
    competes against a seeded random subset of that size, which trades
    fidelity for O(competitors) solves.
    """
    if ps.P.shape[0] < 2:
        raise InvalidInput("need at least two patches to extract filters")
    if competitors is not None and competitors < 1:
        raise InvalidInput("competitors cap must be at least 1")
    keep = np.sort(np.unique(ps.P, axis=0, return_index=True)[1])
    P = ps.P[keep]
    n = P.shape[0]
    if n < 2:
        raise InvalidInput("patches are all identical")

    def solve(i: int) -> Neuron | None:
        others = np.delete(np.arange(n), i)
        if competitors is not None and competitors < others.size:
            sub_rng = np.random.default_rng((seed, i))
            others = others[sub_rng.choice(others.size, size=competitors,
                                           replace=False)]
        stacked = np.vstack([P[i], P[others]])
        try:
            nrn = extreme_point_basis(stacked, 0, cfg)
        except DegenerateExtreme:
            return None
        nrn.meta["sample_index"] = int(keep[i])
        return nrn

    return [nrn for nrn in _map_ordered(solve, range(n)) if nrn is not None]


@dataclass
class RFPipeline:
    """A trained random-features image model: filters, pooling, output weights.

    `features` re-applies the stored patch normalization and whitening map to
    any image stack, so the pipeline transfers to test data unchanged.
    """

    patch: int
    stride: int
    pool: int
    epsilon_norm: float
    zca_eps: float | None
    zca_map: np.ndarray | None
    filters: np.ndarray
    w: np.ndarray
    dropped_patches: int = 0
    meta: dict = field(default_factory=dict)

    def features(self, images) -> np.ndarray:
        """Max-pooled ReLU filter activations, one row per image."""
        images = _as_images(images)
        windows = _window_grid(images, self.patch, self.stride)
        _, gh, gw, _, _ = windows.shape
        if gh % self.pool or gw % self.pool:
            raise InvalidInput(
                f"pool {self.pool} does not divide the {gh}x{gw} position grid")

        def encode(img_windows: np.ndarray) -> np.ndarray:
            rows = _normalize_rows(img_windows.reshape(gh * gw, -1),
                                   self.epsilon_norm)
            if self.zca_map is not None:
                rows = rows @ self.zca_map
            act = relu(rows @ self.filters.T).reshape(gh, gw, -1)
            pooled = act.reshape(gh // self.pool, self.pool,
                                 gw // self.pool, self.pool, -1).max(axis=(1, 3))
            return pooled.ravel()

        return np.stack(_map_ordered(encode, list(windows)))

    def predict(self, images) -> np.ndarray:
        return self.features(images) @ self.w

    def to_json(self) -> str:
        return json.dumps({
            "patch": self.patch,
            "stride": self.stride,
            "pool": self.pool,
            "epsilon_norm": self.epsilon_norm,
            "zca_eps": self.zca_eps,
            "zca_map": None if self.zca_map is None else self.zca_map.tolist(),
            "filters": self.filters.tolist(),
            "w": self.w.tolist(),
            "dropped_patches": self.dropped_patches,
            "meta": self.meta,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RFPipeline":
        d = json.loads(text)
        return cls(patch=int(d["patch"]), stride=int(d["stride"]),
                   pool=int(d["pool"]), epsilon_norm=float(d["epsilon_norm"]),
                   zca_eps=None if d["zca_eps"] is None else float(d["zca_eps"]),
                   zca_map=None if d["zca_map"] is None else np.array(d["zca_map"]),
                   filters=np.array(d["filters"]), w=np.array(d["w"]),
                   dropped_patches=int(d.get("dropped_patches", 0)),
                   meta=d.get("meta", {}))


def convex_rf_train(images, labels, patch: int, stride: int, pool: int,
                    count: int, beta: float, cfg: SolverConfig | None = None,
                    epsilon_norm: float = 1e-5, zca_eps: float | None = 0.1,
                    competitors: int | None = None):
    """Train the full pipeline: sample patches, extract filters, fit outputs.

    Whitening runs with ridge `zca_eps` unless it is None.  Returns the
    pipeline and the output-layer SolveReport, whose `extra` records the
    dropped-patch count and the feature dimension.
    """
    cfg = cfg or SolverConfig()
    images = _as_images(images)
    y = np.asarray(labels, dtype=float).ravel()
    if y.size != images.shape[0]:
        raise InvalidInput("need one label per image")
    ps = extract_patches(images, patch, stride, count, seed=cfg.seed,
                         epsilon_norm=epsilon_norm)
    if zca_eps is not None:
        ps = zca_whiten_patches(ps, zca_eps)
    filters = filters_from_patches(ps, cfg, competitors=competitors,
                                   seed=cfg.seed)
    if not filters:
        raise DegenerateExtreme("every sampled patch was interior")
    dropped = count - len(filters)
    pipe = RFPipeline(patch=patch, stride=stride, pool=pool,
                      epsilon_norm=epsilon_norm, zca_eps=zca_eps,
                      zca_map=ps.zca_map,
                      filters=np.stack([f.u for f in filters]),
                      w=np.zeros(0), dropped_patches=dropped)
    B = pipe.features(images)
    w, rep = lasso(B, y, beta, cfg)
    pipe.w = w
    rep.extra["dropped_patches"] = dropped
    rep.extra["n_filters"] = len(filters)
    rep.extra["feature_dim"] = int(B.shape[1])
    return pipe, rep


# ---------------------------------------------------------------------------
# image ingestion: CSV with a shape header, or a directory of PGM files
# ---------------------------------------------------------------------------


def save_images_csv(path, images) -> None:
    """Write a stack of images as `shape,h,w` plus one flattened row each."""
    images = _as_images(images)
    n, h, w = images.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"shape,{h},{w}\n")
        for img in images:
            fh.write(",".join("%.17g" % v for v in img.ravel()) + "\n")


def load_images_csv(path) -> np.ndarray:
    """Read the CSV written by save_images_csv back into an n x h x w array."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise DataFormatError("empty image file", line=1)
    head = lines[0].split(",")
    if len(head) != 3 or head[0].strip() != "shape":
        raise DataFormatError("first line must be 'shape,h,w'", line=1)
    try:
        h, w = int(head[1]), int(head[2])
    except ValueError:
        raise DataFormatError("shape header must hold two integers", line=1)
    if h < 1 or w < 1:
        raise DataFormatError("image shape must be positive", line=1)
    rows = []
    for k, ln in enumerate(lines[1:], start=2):
        toks = ln.split(",")
        if len(toks) != h * w:
            raise DataFormatError(
                f"expected {h * w} pixels, got {len(toks)}", line=k)
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise DataFormatError("non-numeric pixel value", line=k)
    if not rows:
        raise DataFormatError("no image rows after the shape header", line=2)
    return np.array(rows).reshape(len(rows), h, w)


def _read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()

    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] not in b"\r\n":
                i += 1
        elif data[i:i + 1].isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < 4:
        raise DataFormatError(f"{path}: truncated PGM header", line=1)
    magic = tokens[0]
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise DataFormatError(f"{path}: non-integer PGM header", line=1)
    if w < 1 or h < 1 or maxval < 1:
        raise DataFormatError(f"{path}: invalid PGM dimensions", line=1)

    if magic == b"P2":
        vals = data[i:].split()
        if len(vals) != w * h:
            raise DataFormatError(
                f"{path}: expected {w * h} pixels, got {len(vals)}", line=1)
        img = np.array([float(v) for v in vals])
    elif magic == b"P5":
        if maxval > 255:
            raise DataFormatError(f"{path}: only 8-bit P5 supported", line=1)
        raster = data[i + 1:i + 1 + w * h]
        if len(raster) != w * h:
            raise DataFormatError(f"{path}: truncated P5 raster", line=1)
        img = np.frombuffer(raster, dtype=np.uint8).astype(float)
    else:
        raise DataFormatError(f"{path}: not a P2/P5 PGM file", line=1)
    return img.reshape(h, w)


def load_pgm_dir(path) -> np.ndarray:
    """Read every .pgm in a directory (sorted by name) into one image stack."""
    names = sorted(f for f in os.listdir(path) if f.endswith(".pgm"))
    if not names:
        raise InvalidInput(f"no .pgm files in {path}")
    imgs = [_read_pgm(os.path.join(path, f)) for f in names]
    shape = imgs[0].shape
    for name, img in zip(names, imgs):
        if img.shape != shape:
            raise DataFormatError(
                f"{name}: shape {img.shape} differs from {shape}", line=1)
    return np.stack(imgs)
