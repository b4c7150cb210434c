"""Closed-form globally optimal networks for whitened, rank-one, and 1-D data,
including the exact thresholding behavior of the regularization strength.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyClass, InvalidInput, NotWhitened, RankError
from .geometry import Neuron
from .linalg import as_matrix, is_whitened, pseudo_inverse, relu, svd

WHITE_TOL = 1e-6


@dataclass
class Network:
    """Two-layer ReLU network: f(A) = sum_j w_j (A u_j + b_j 1)_+."""

    neurons: list[Neuron]
    w: np.ndarray | None = None
    W: np.ndarray | None = None
    has_bias: bool = False

    def __post_init__(self):
        if (self.w is None) == (self.W is None) and self.neurons:
            raise InvalidInput("provide exactly one of w (scalar output) or W")
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=float).ravel()
            if self.w.size != len(self.neurons):
                raise InvalidInput("w must have one weight per neuron")
        if self.W is not None:
            self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
            if self.W.shape[0] != len(self.neurons):
                raise InvalidInput("W must have one row per neuron")
        if self.has_bias and any(nrn.b is None for nrn in self.neurons):
            raise InvalidInput("has_bias networks need a bias on every neuron")

    @property
    def m(self) -> int:
        return len(self.neurons)

    def features(self, A) -> np.ndarray:
        A = as_matrix(A)
        if not self.neurons:
            return np.zeros((A.shape[0], 0))
        return np.stack([nrn.activations(A) for nrn in self.neurons], axis=1)

    def predict(self, A) -> np.ndarray:
        phi = self.features(A)
        if self.w is not None:
            return phi @ self.w
        if self.W is not None:
            return phi @ self.W
        return np.zeros(phi.shape[0])

    def output_l1(self) -> float:
        if self.w is not None:
            return float(np.abs(self.w).sum())
        if self.W is not None:
            return float(np.abs(self.W).sum())
        return 0.0

    def to_json(self) -> str:
        doc = {
            "neurons": [
                {"u": list(nrn.u), "b": None if nrn.b is None else float(nrn.b)}
                for nrn in self.neurons
            ],
            "has_bias": self.has_bias,
        }
        if self.w is not None:
            doc["w"] = list(self.w)
        elif self.W is not None:
            doc["W"] = [list(row) for row in self.W]
        else:
            doc["w"] = []
        return _format_json(doc)

    @classmethod
    def from_json(cls, text: str) -> "Network":
        doc = json.loads(text)
        has_bias = bool(doc.get("has_bias", False))
        neurons = [
            Neuron(u=np.asarray(entry["u"], dtype=float),
                   b=None if entry.get("b") is None else float(entry["b"]),
                   provenance="closed-form")
            for entry in doc.get("neurons", [])
        ]
        w = doc.get("w")
        W = doc.get("W")
        if W is not None:
            return cls(neurons=neurons, W=np.asarray(W, dtype=float), has_bias=has_bias)
        w = np.asarray(w if w is not None else [], dtype=float)
        return cls(neurons=neurons, w=w, has_bias=has_bias)


def _format_json(obj) -> str:
    """JSON text with every float printed to 17 significant digits."""
    if isinstance(obj, dict):
        items = (f'"{k}": {_format_json(v)}' for k, v in obj.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_format_json(v) for v in obj) + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return f"{float(obj):.17g}"
    if isinstance(obj, str):
        return json.dumps(obj)
    raise InvalidInput(f"cannot serialize {type(obj).__name__}")


@dataclass
class RegPath:
    """Which branch of a closed-form theorem fired at this beta."""

    beta: float
    active_neuron_count: int
    case_label: str
    meta: dict = field(default_factory=dict)


def _require_whitened(A):
    if not is_whitened(A, tol=WHITE_TOL):
        raise NotWhitened("closed forms require AA^T = I within 1e-6")


def _unit(x):
    nx = np.linalg.norm(x)
    return x / nx, nx


def l0_closed_form(A, y) -> Network:
    """Minimum-width exact interpolation of (A, y) for full-row-rank data.

    At most two neurons: the normalized pseudo-inverse images of the positive
    and negative parts of y, with weights equal to their norms.
    """
    A = as_matrix(A)
    y = np.asarray(y, dtype=float).ravel()
    n, d = A.shape
    if y.size != n:
        raise InvalidInput("y must have one entry per sample")
    if svd(A).r < n:
        raise RankError("closed form needs full row rank")
    P = pseudo_inverse(A)
    neurons, weights = [], []
    for sign in (1.0, -1.0):
        part = relu(sign * y)
        if not part.any():
            continue
        u, norm = _unit(P @ part)
        neurons.append(Neuron(u=u, provenance="closed-form"))
        weights.append(sign * norm)
    return Network(neurons=neurons, w=np.array(weights))


def regularized_whitened(A, y, beta: float) -> tuple[Network, RegPath]:
    """Optimal network for the squared-loss l1-regularized objective on
    whitened data: each side of y survives iff beta <= its norm, with the
    output weight shrunk by beta.
    """
    A = as_matrix(A)
    y = np.asarray(y, dtype=float).ravel()
    if beta < 0:
        raise InvalidInput("beta must be nonnegative")
    _require_whitened(A)
    P = pseudo_inverse(A)
    p = float(np.linalg.norm(relu(y)))
    m = float(np.linalg.norm(relu(-y)))
    # on whitened data the pseudo-inverse is an isometry on the row space, so
    # the theorem's threshold ||pinv(A)(y)_+|| coincides with ||(y)_+||
    for side, norm in (("positive", p), ("negative", m)):
        part = relu(y if side == "positive" else -y)
        if norm > 0:
            assert abs(np.linalg.norm(P @ part) - norm) <= 1e-6 * (1.0 + norm)

    neurons, weights, sides = [], [], []
    boundary = []
    for sign, norm, name in ((1.0, p, "positive"), (-1.0, m, "negative")):
        if norm <= 0 or beta > norm:
            continue
        u, _ = _unit(P @ relu(sign * y))
        neurons.append(Neuron(u=u, provenance="closed-form"))
        weights.append(sign * (norm - beta))
        sides.append(name)
        if beta == norm:
            boundary.append(name)
    label = {2: "both-sides", 0: "zero"}.get(len(sides), f"{sides[0]}-side" if sides else "zero")
    meta = {"pos_norm": p, "neg_norm": m}
    if boundary:
        meta["boundary_sides"] = boundary
        meta["weight_interval"] = [0.0, 0.0]
    path = RegPath(beta=float(beta), active_neuron_count=len(neurons),
                   case_label=label, meta=meta)
    return Network(neurons=neurons, w=np.array(weights)), path


def hinge_whitened(A, y, beta: float) -> tuple[Network, RegPath]:
    """Optimal network for hinge loss with l1 regularization on whitened data.

    Each class side keeps weight +/- sqrt(n_side) while beta < sqrt(n_side)
    and is dropped once beta exceeds it; at equality every weight in
    [0, sqrt(n_side)] is optimal and the upper endpoint is returned.
    """
    A = as_matrix(A)
    y = np.asarray(y, dtype=float).ravel()
    if beta < 0:
        raise InvalidInput("beta must be nonnegative")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidInput("hinge labels must be +/-1")
    _require_whitened(A)
    P = pseudo_inverse(A)
    neurons, weights, sides = [], [], []
    meta = {}
    for sign, name in ((1.0, "positive"), (-1.0, "negative")):
        count = int(np.sum(y == sign))
        root = np.sqrt(count)
        meta[f"{name}_threshold"] = root
        if count == 0 or beta > root:
            continue
        u, _ = _unit(P @ relu(sign * y))
        neurons.append(Neuron(u=u, provenance="closed-form"))
        weights.append(sign * root)
        sides.append(name)
        if beta == root:
            meta.setdefault("boundary_sides", []).append(name)
            meta.setdefault("weight_intervals", {})[name] = [0.0, root]
    label = {2: "both-sides", 0: "zero"}.get(len(sides), f"{sides[0]}-side" if sides else "zero")
    path = RegPath(beta=float(beta), active_neuron_count=len(neurons),
                   case_label=label, meta=meta)
    return Network(neurons=neurons, w=np.array(weights)), path


def multiclass_whitened(A, Y, beta: float) -> tuple[Network, RegPath]:
    """Optimal network for one-hot multiclass squared loss with a group
    penalty on whitened data: class j survives iff beta <= sqrt(n_j), with
    output row (sqrt(n_j) - beta) e_j.
    """
    A = as_matrix(A)
    Y = as_matrix(Y, "Y")
    if beta < 0:
        raise InvalidInput("beta must be nonnegative")
    if Y.shape[0] != A.shape[0]:
        raise InvalidInput("Y must have one row per sample")
    if not (np.all(np.isin(Y, (0.0, 1.0))) and np.all(Y.sum(axis=1) == 1.0)):
        raise InvalidInput("Y must be one-hot")
    counts = Y.sum(axis=0)
    if np.any(counts == 0):
        raise EmptyClass(f"classes {np.where(counts == 0)[0].tolist()} are empty")
    _require_whitened(A)
    P = pseudo_inverse(A)
    o = Y.shape[1]
    neurons, rows, active = [], [], []
    meta = {"class_thresholds": [float(np.sqrt(c)) for c in counts]}
    for j in range(o):
        root = float(np.sqrt(counts[j]))
        if beta > root:
            continue
        u, _ = _unit(P @ Y[:, j])
        neurons.append(Neuron(u=u, provenance="closed-form"))
        row = np.zeros(o)
        row[j] = root - beta
        rows.append(row)
        active.append(j)
        if beta == root:
            meta.setdefault("boundary_classes", []).append(j)
    label = "all-classes" if len(active) == o else ("zero" if not active else "subset")
    meta["active_classes"] = active
    path = RegPath(beta=float(beta), active_neuron_count=len(neurons),
                   case_label=label, meta=meta)
    W = np.array(rows) if rows else np.zeros((0, o))
    return Network(neurons=neurons, W=W, has_bias=False), path


# ---------------------------------------------------------------------------
# the 1-D non-uniqueness family
# ---------------------------------------------------------------------------

FIXTURE_A = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
FIXTURE_Y = np.array([1.0, -1.0, 1.0, 1.0, -1.0])
FIXTURE_DUAL = np.array([1.0, -3.0, 2.0, 1.0, -1.0])
FIXTURE_BETA = 1e-4

# biases of the two equality-mode dictionaries (u = +1 first, then u = -1)
_EQ1_PAIRS = [(1.0, 2.0), (1.0, 1.0), (1.0, 0.0), (1.0, -1.0),
              (-1.0, -1.0), (-1.0, 0.0), (-1.0, 1.0), (-1.0, 2.0)]
_EQ1_W = np.array([0.0, 6419 / 5000, -3919 / 2500, -8581 / 5000,
                   13581 / 5000, -1081 / 2500, -1419 / 5000, 0.0])
_EQ2_PAIRS = [(1.0, 2.0), (1.0, 1.0), (1.0, 0.0), (1.0, -0.5),
              (-1.0, -1.0), (-1.0, 0.0), (-1.0, 0.5), (-1.0, 2.0)]
_EQ2_W = np.array([0.0, 4 / 3, 0.0, -10 / 3, 8 / 3, 0.0, -2 / 3, 0.0])

_REG_W1 = np.array([0.0, 3197 / 2400, -2497 / 1500, 0.0, -19997 / 12000,
                    31961 / 12000, -997 / 3000, 0.0, -3997 / 12000, 0.0])
_REG_W2 = np.array([0.0, 191823 / 140000, -990613 / 840000, -471683 / 420000,
                    -128017 / 120000, 367547 / 140000, -127357 / 840000,
                    -87827 / 420000, -31993 / 120000, 0.0])
_REG_W3 = np.array([0.0, 323691 / 248000, -7349999 / 5208000, -1039627 / 1041600,
                    -4660169 / 5208000, 667193 / 248000, -1810997 / 5208000,
                    -199753 / 1041600, -795707 / 5208000, 0.0])
_REG_W4 = np.array([0.0, 167847 / 116000, -1248409 / 1218000, -1058987 / 974400,
                    -6500131 / 4872000, 295631 / 116000, -25387 / 1218000,
                    -99563 / 974400, -2082883 / 4872000, 0.0])


def _reg_pairs(c: float):
    """The regularized dictionary's (u, b) pairs for interior bias offset c."""
    return ([(1.0, b) for b in (2.0, 1.0, 0.0, -c, -1.0)]
            + [(-1.0, b) for b in (-1.0, 0.0, c, 1.0, 2.0)])


def _net_1d(pairs, w):
    neurons = [Neuron(u=np.array([u]), b=b, provenance="closed-form")
               for u, b in pairs]
    return Network(neurons=neurons, w=np.asarray(w, dtype=float), has_bias=True)


def fixture_dictionary(pairs):
    """Feature matrix of the 1-D fixture under the given (u, b) dictionary."""
    return np.stack([relu(u * FIXTURE_A + b) for u, b in pairs], axis=1)


def nonuniqueness_fixture() -> list[tuple[Network, float]]:
    """Distinct globally optimal networks for the same five-point 1-D dataset.

    Two equality-constrained interpolants (minimum total output weight 8) and
    four regularized optima at beta = 1e-4 (objective 1999/2500000 under the
    per-sample convention beta*||w||_1 + ||f - y||^2 / (2n)), all fitting the
    same data while disagreeing away from it.
    """
    out = []
    for pairs, w in ((_EQ1_PAIRS, _EQ1_W), (_EQ2_PAIRS, _EQ2_W)):
        net = _net_1d(pairs, w)
        out.append((net, float(np.abs(w).sum())))
    n = FIXTURE_A.size
    # the third listed solution fits the c = 0.8 dictionary and the fourth
    # fits c = 0.2 (verified against the stationarity conditions)
    for c, w in ((0.5, _REG_W1), (0.5, _REG_W2), (0.8, _REG_W3), (0.2, _REG_W4)):
        net = _net_1d(_reg_pairs(c), w)
        resid = net.predict(FIXTURE_A[:, None]) - FIXTURE_Y
        obj = FIXTURE_BETA * float(np.abs(w).sum()) + float(resid @ resid) / (2 * n)
        out.append((net, obj))
    return out
