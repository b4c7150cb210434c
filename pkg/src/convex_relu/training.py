"""Global training loops and duality-gap certification.

Cutting-plane training over rectified-unit dictionaries, one-shot dictionary
fits, the exact convex program for spike-free data, vector-output variants, a
projected-gradient baseline, and gap-vs-dictionary-size sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .closed_form import Network, _format_json
from .exceptions import Infeasible, InvalidInput
from .geometry import (
    Neuron,
    enumerate_extremes_1d,
    enumerate_extremes_rankone,
    max_correlation,
    spike_free_check,
    _rank_one_factors,
)
from .linalg import as_matrix, relu
from .solvers import (
    SolverConfig,
    basis_pursuit,
    cone_ball_lp,
    group_lasso,
    group_lasso_eq,
    l1_dual,
    l1_svm,
    lasso,
    _svm_multipliers,
)

VIOLATION_TOL = 1e-4  # a neuron is violating when |v^T phi| exceeds 1 + this
MAX_ROUNDS = 50
LOSSES = ("squared", "hinge")
VARIANTS = ("group-l2", "l1-per-class")


@dataclass
class DualCertificate:
    """A feasible dual point together with the verification evidence.

    ``max_constraint`` is the largest constraint value found for the raw dual
    candidate; the stored ``v`` (or ``V``) is already scaled down by
    ``max(1, max_constraint)`` so it is feasible for every constraint the
    search saw, and its dual objective is a valid lower bound.
    """

    v: np.ndarray | None = None
    V: np.ndarray | None = None
    max_constraint: float = 0.0
    verified_neurons: int = 0

    def __post_init__(self):
        if (self.v is None) == (self.V is None):
            raise InvalidInput("provide exactly one of v (scalar) or V (vector output)")
        if self.v is not None:
            self.v = np.asarray(self.v, dtype=float).ravel()
        else:
            self.V = np.atleast_2d(np.asarray(self.V, dtype=float))


@dataclass
class TrainReport:
    """Immutable snapshot of a training run."""

    primal_objective: float
    dual_objective: float
    gap: float
    rounds: int
    neurons_added: int
    converged: bool
    history: list = field(default_factory=list)  # [(round, gap), ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.gap < -1e-6:
            raise InvalidInput(f"negative duality gap {self.gap:.3e} (dual exceeds primal)")

    def to_json(self) -> str:
        return _format_json(
            {
                "objective": float(self.primal_objective),
                "dual": float(self.dual_objective),
                "gap": float(self.gap),
                "rounds": int(self.rounds),
                "history": [[int(r), float(g)] for r, g in self.history],
            }
        )


# ---------------------------------------------------------------------------
# shared objective / dual-value helpers
# ---------------------------------------------------------------------------


def _features(A, neurons):
    if not neurons:
        return np.zeros((A.shape[0], 0))
    return np.stack([nrn.activations(A) for nrn in neurons], axis=1)


def _primal_value(Phi, w, y, beta, loss, equality, K):
    f = Phi @ w if w.size else np.zeros(y.shape[0])
    if equality:
        return float(np.abs(w).sum() + K * np.abs(y - f).sum())
    if loss == "squared":
        return float(beta * np.abs(w).sum() + 0.5 * np.sum((f - y) ** 2))
    return float(beta * np.abs(w).sum() + np.maximum(0.0, 1.0 - y * f).sum())


def _dual_value(v, y, beta, loss, equality):
    if equality:
        return float(v @ y)
    if loss == "squared":
        return float(beta * (v @ y) - 0.5 * beta**2 * (v @ v))
    return float(beta * (y @ v))  # hinge multipliers alpha_i = beta y_i v_i


def _dedup_key(u, b):
    return (tuple(np.round(u, 9)), None if b is None else round(float(b), 9))


def _project_zero_sum_box(alpha, y, sweeps: int = 200):
    """Alternating projection of hinge multipliers onto [0,1]^n with y^T a = 0."""
    a = np.clip(alpha, 0.0, 1.0)
    for _ in range(sweeps):
        a = a - y * (y @ a) / y.size
        a = np.clip(a, 0.0, 1.0)
        if abs(y @ a) <= 1e-12:
            break
    return a


def _safe_unit(u):
    nu = np.linalg.norm(u)
    return u / nu if nu > 1e-30 else None


# ---------------------------------------------------------------------------
# violation oracles (relaxed: activations constrained to stay nonnegative)
# ---------------------------------------------------------------------------


def _cone_oracle(A, v, cfg):
    """Best violating neurons for +/-v over {u : Au >= 0, ||u|| <= 1}."""
    out = []
    best = 0.0
    for s in (1.0, -1.0):
        u, val, _ = cone_ball_lp(A, s * v, "max", cfg)
        unit = _safe_unit(u)
        if unit is None:
            continue
        val = float((s * v) @ relu(A @ unit))  # cone is scale-invariant; rescale to the sphere
        if val > best:
            best = val
        out.append((val, Neuron(u=unit, provenance="cutting-plane")))
    return best, out


def _bias_oracle(A, v):
    """Exact relaxed oracle with bias: for zero-sum v the bias drops out.

    max v^T(Au + b 1) over {Au + b1 >= 0, ||u|| <= 1} equals ||A^T v|| at
    u = A^T v / ||A^T v||; the bias is snapped to the lower endpoint of its
    feasible interval so one activation constraint is tight.
    """
    g = A.T @ v
    ng = float(np.linalg.norm(g))
    if ng <= 1e-30:
        return 0.0, []
    out = []
    for s in (1.0, -1.0):
        u = s * g / ng
        b = float(-np.min(A @ u))
        out.append((ng, Neuron(u=u, b=b, provenance="cutting-plane")))
    return ng, out


# ---------------------------------------------------------------------------
# master problems over a finite dictionary
# ---------------------------------------------------------------------------


def _scalar_master(Phi, y, beta, loss, equality, use_bias, K, cfg):
    """Solve the restricted primal and return (w, v, solver_report).

    Equality mode uses the exact-penalty form min ||w||_1 + K||y - Phi w||_1
    (always feasible; the slack vanishes once the dictionary can interpolate
    and K exceeds the dual's sup-norm), solved as basis pursuit over the
    dictionary extended with scaled slack columns. The dual vector comes from
    the l1 dual over the same extended dictionary, with the zero-sum side
    constraint in bias mode.
    """
    n = y.shape[0]
    m = Phi.shape[1]
    if equality:
        ext = np.hstack([Phi, np.eye(n) / K]) if m else np.eye(n) / K
        sol, rep = basis_pursuit(ext, y, cfg)
        w = sol[:m]
        v, _ = l1_dual(ext, y, zero_sum=use_bias, cfg=cfg)
        return w, v, rep
    if loss == "squared":
        if m == 0:
            return np.zeros(0), y / beta, None
        w, rep = lasso(Phi, y, beta, cfg)
        r = y - Phi @ w
        if use_bias:
            r = r - r.mean()
        return w, r / beta, rep
    if m == 0:
        return np.zeros(0), y / beta, None
    w, rep = l1_svm(Phi, y, beta, cfg)
    alpha = rep.extra["hinge_weights"]
    if use_bias:
        alpha = _project_zero_sum_box(alpha, y)
    return w, (y * alpha) / beta, rep


def _recompute_dual(Phi, w, y, beta, loss, use_bias):
    """Dual candidate from optimality formulas at an arbitrary iterate."""
    f = Phi @ w if w.size else np.zeros(y.shape[0])
    if loss == "squared":
        r = y - f
        if use_bias:
            r = r - r.mean()
        return r / beta
    alpha, _ = _svm_multipliers(Phi, y, w, beta) if w.size else (np.ones(y.shape[0]), 0.0)
    if use_bias:
        alpha = _project_zero_sum_box(alpha, y)
    return (y * alpha) / beta


def _polish_lasso_support(Phi, w, y, beta, passes: int = 3):
    """Refit a lasso iterate exactly on its detected support.

    At small beta the Fenchel dual v = (y - Phi w)/beta amplifies solver
    error in w a thousandfold, so solve the stationarity system
    Phi_S^T (y - Phi_S w_S) = beta sign(w_S) on the active set (iterating a
    few times in case signs flip) and keep the refit only when it is
    sign-consistent and does not increase the objective.
    """
    if not w.size:
        return w

    def objective(wc):
        r = y - Phi @ wc
        return beta * float(np.abs(wc).sum()) + 0.5 * float(r @ r)

    scale = float(np.abs(w).max())
    S = np.abs(w) > 1e-10 * (1.0 + scale)
    if not np.any(S):
        return w
    sgn = np.sign(w[S])
    for _ in range(passes):
        G = Phi[:, S]
        ws, *_ = np.linalg.lstsq(G.T @ G, G.T @ y - beta * sgn, rcond=None)
        flipped = np.sign(ws) * sgn < 0
        if not np.any(flipped):
            break
        keep = ~flipped
        idx = np.nonzero(S)[0][keep]
        S = np.zeros_like(S)
        S[idx] = True
        sgn = sgn[keep]
        if not np.any(S):
            return w
    else:
        return w
    cand = np.zeros_like(w)
    cand[S] = ws
    stat = float(np.abs(Phi[:, S].T @ (y - Phi[:, S] @ ws) - beta * sgn).max())
    if stat > 1e-7 * (1.0 + beta) or objective(cand) > objective(w) + 1e-12:
        return w
    return cand


def _reduce_to_basic_support(Phi, w):
    """Shrink an l1 solution's support to an affinely independent set.

    Any direction in the null space of [Phi_S; sign(w_S)] preserves both the
    fit Phi w and the l1 value, so stepping to the first zero crossing drops
    an atom at no cost. Repeating until the stacked matrix has full column
    rank realizes, computationally, the guarantee that some optimum uses at
    most rank + 1 atoms; the dual candidate is untouched because the fit is.
    """
    w = np.asarray(w, dtype=float).copy()
    f0 = Phi @ w if w.size else np.zeros(Phi.shape[0])
    scale0 = float(np.abs(f0).max(initial=0.0)) + 1.0
    for _ in range(w.size):
        scale = float(np.abs(w).max(initial=0.0))
        if scale <= 0.0:
            break
        S = np.nonzero(np.abs(w) > 1e-12 * (1.0 + scale))[0]
        if S.size <= 1:
            break
        M = np.vstack([Phi[:, S], np.sign(w[S])])
        _, sv, Vt = np.linalg.svd(M)
        if sv.size >= S.size and sv[S.size - 1] > 1e-10 * sv[0]:
            break  # full column rank: already a basic solution
        h = Vt[-1]
        mask = np.abs(h) > 1e-14
        if not np.any(mask):
            break
        steps = np.where(mask, -w[S] / np.where(mask, h, 1.0), np.inf)
        if not np.any(steps > 0.0):
            h, steps = -h, -steps
        pos = steps > 0.0
        if not np.any(pos):
            break
        j = int(np.flatnonzero(pos)[np.argmin(steps[pos])])
        trial = w.copy()
        trial[S] = w[S] + float(steps[j]) * h
        trial[S[j]] = 0.0
        if float(np.abs(Phi @ trial - f0).max()) > 1e-9 * scale0:
            break
        w = trial
    return w


def _dict_sup(Phi, v):
    return float(np.abs(Phi.T @ v).max()) if Phi.size else 0.0


def _diverse_order(Phi, order):
    """Reorder candidate columns so each early pick expands the feature span.

    Near-duplicate atoms cluster; plain top-weight prefixes can stay rank
    deficient for many steps, so greedily front-load columns that add a new
    direction and append the remainder afterwards.
    """
    picked = []
    Q = np.zeros((Phi.shape[0], 0))
    for j in order:
        phi = Phi[:, j]
        resid = phi - Q @ (Q.T @ phi)
        nr = float(np.linalg.norm(resid))
        if nr > 1e-6 * max(float(np.linalg.norm(phi)), 1e-30):
            Q = np.hstack([Q, (resid / nr)[:, None]])
            picked.append(j)
    rest = [j for j in order if j not in set(picked)]
    return picked + rest


def _sparsify_equality(Phi, w, y, yscale):
    """Concentrate an equality-mode solution on the smallest adequate support.

    Near-duplicate atoms from late cutting-plane rounds create an almost-flat
    optimal face on which the splitting solver spreads weight; re-fitting the
    interpolation constraint on top-|w| supports recovers a vertex whenever
    that does not increase the l1 value.
    """
    if w.size == 0:
        return w
    l1 = float(np.abs(w).sum())
    seq = _diverse_order(Phi, np.argsort(-np.abs(w), kind="stable"))
    for k in range(1, w.size + 1):
        S = np.asarray(seq[:k])
        wS, *_ = np.linalg.lstsq(Phi[:, S], y, rcond=None)
        if float(np.abs(Phi[:, S] @ wS - y).max()) > 1e-8 * yscale:
            continue
        if float(np.abs(wS).sum()) <= l1 + 1e-9 * (1.0 + l1):
            out = np.zeros_like(w)
            out[S] = wS
            return out
    return w


def _trim_network(neurons, w, use_bias):
    keep = np.abs(w) > 1e-10 * (1.0 + (np.abs(w).max() if w.size else 0.0))
    kept = [nrn for nrn, k in zip(neurons, keep) if k]
    return Network(neurons=kept, w=w[keep], has_bias=use_bias and bool(kept))


# ---------------------------------------------------------------------------
# cutting-plane training
# ---------------------------------------------------------------------------


def cutting_plane_train(ds, use_bias: bool, beta: float, loss: str = "squared",
                        cfg: SolverConfig | None = None, viol_tol: float = VIOLATION_TOL,
                        max_rounds: int = MAX_ROUNDS):
    """Train a two-layer ReLU network by cutting planes on the dual.

    Each round solves the master problem restricted to the dictionary built
    so far, reads off the dual vector v, and asks the relaxed violation
    oracle (activations constrained to the nonnegative cone, so the rectifier
    is linear) for neurons with |v^T (A u + b 1)_+| > 1 + ``viol_tol``. With a
    bias the dual carries the zero-sum side constraint, under which the
    subproblem reduces to u = A^T v / ||A^T v|| with the bias at the lower
    endpoint of its feasible interval.

    beta = 0 selects the equality-constrained mode (squared loss only); the
    master is then the exact-penalty form of basis pursuit, and a persistent
    slack at convergence raises Infeasible.

    Parameters
    ----------
    ds : Dataset with scalar targets
    use_bias : train neurons with a bias term
    beta : nonnegative l1 penalty (0 = equality mode)
    loss : "squared" or "hinge"
    cfg : SolverConfig for the inner solvers
    viol_tol : violation threshold above which a neuron is added
    max_rounds : cutting-plane round limit

    Returns
    -------
    (Network, TrainReport); the report's history holds (round, gap) pairs
    with a running-best dual, so the gap column is nonincreasing.
    """
    if loss not in LOSSES:
        raise InvalidInput("loss must be 'squared' or 'hinge'")
    if beta < 0:
        raise InvalidInput("beta must be nonnegative")
    A = ds.A
    y = ds.y
    if y is None:
        raise InvalidInput("cutting_plane_train needs scalar targets (use vector_cutting_plane)")
    equality = beta == 0.0
    if equality and loss != "squared":
        raise InvalidInput("equality mode (beta = 0) is defined for the squared loss")
    n = A.shape[0]
    yscale = max(1.0, float(np.abs(y).max()))
    K = 1e3 * yscale
    bumps = 0

    neurons: list[Neuron] = []
    seen = set()
    w = np.zeros(0)
    v = np.zeros(n)
    primal_best = np.inf
    dual_best = -np.inf
    history = []
    primal_path = []
    converged = False
    violation = np.inf
    rounds = 0

    while rounds < max_rounds:
        rounds += 1
        Phi = _features(A, neurons)
        if neurons:
            w_new, v, _ = _scalar_master(Phi, y, beta, loss, equality, use_bias, K, cfg)
        else:
            # empty dictionary: the dual candidate is the (scaled) target itself
            w_new = np.zeros(0)
            if loss == "hinge":
                alpha = np.ones(n)
                if use_bias:
                    alpha = _project_zero_sum_box(alpha, y)
                v = (y * alpha) / beta
            else:
                v = y - y.mean() if use_bias else y.copy()
                if not equality:
                    v = v / beta
        primal_new = _primal_value(Phi, w_new, y, beta, loss, equality, K)
        if primal_new <= primal_best:
            primal_best, w = primal_new, w_new
        else:
            w = np.concatenate([w, np.zeros(len(neurons) - w.size)])
            v = _recompute_dual(Phi, w, y, beta, loss, use_bias) if not equality else v
        primal_path.append(primal_best)

        violation, candidates = (_bias_oracle(A, v) if use_bias else _cone_oracle(A, v, cfg))
        lam = max(1.0, violation, _dict_sup(Phi, v))
        dual_best = max(dual_best, _dual_value(v / lam, y, beta, loss, equality))
        history.append((rounds, primal_best - dual_best))

        if violation <= 1.0 + viol_tol:
            if equality:
                resid = float(np.abs(y - (Phi @ w if w.size else 0.0)).max())
                vmax = float(np.abs(v).max()) if v.size else 0.0
                if resid > 1e-6 * yscale or vmax >= 0.99 * K:
                    if bumps >= 2:
                        raise Infeasible(
                            "equality targets stay unreachable; slack persists "
                            f"(residual {resid:.3e} at K={K:.1e})", residual=resid)
                    K *= 100.0
                    bumps += 1
                    continue
            converged = True
            break
        added = 0
        for val, nrn in candidates:
            key = _dedup_key(nrn.u, nrn.b)
            if val > 1.0 + viol_tol and key not in seen:
                seen.add(key)
                neurons.append(nrn)
                added += 1
        if added == 0:
            break  # oracle keeps proposing known neurons; report the last iterate

    if equality and not converged and not neurons:
        raise Infeasible("no violating neuron exists yet the targets are not matched")

    Phi = _features(A, neurons)
    if w.size < len(neurons):
        w = np.concatenate([w, np.zeros(len(neurons) - w.size)])
    if equality and converged:
        w_sp = _sparsify_equality(Phi, w, y, yscale)
        primal_sp = _primal_value(Phi, w_sp, y, beta, loss, equality, K)
        if primal_sp <= primal_best + 1e-9 * (1.0 + abs(primal_best)):
            w = w_sp
            primal_best = min(primal_best, primal_sp)
    net = _trim_network(neurons, w, use_bias)
    gap = primal_best - dual_best
    report = TrainReport(
        primal_objective=primal_best,
        dual_objective=dual_best,
        gap=gap,
        rounds=rounds,
        neurons_added=len(neurons),
        converged=converged,
        history=history,
        meta={
            "violation": float(violation),
            "viol_tol": float(viol_tol),
            "primal_path": primal_path,
            "atoms": list(neurons),
            "penalty_K": (K if equality else None),
            "v": v,
        },
    )
    return net, report


# ---------------------------------------------------------------------------
# one-shot dictionary training
# ---------------------------------------------------------------------------


def dictionary_train(ds, neurons, beta: float, loss: str = "squared",
                     cfg: SolverConfig | None = None, restarts: int = 200, seed: int = 0):
    """l1-regularized fit over a fixed neuron dictionary, with a certified gap.

    Solves the master problem restricted to ``neurons`` (basis pursuit /
    lasso / l1-SVM depending on beta and loss), then runs the full
    verification search to scale the dual candidate into a feasible
    certificate. The reported gap therefore measures dictionary truncation:
    it vanishes only when the dictionary contains an optimal support.
    """
    if not neurons:
        raise InvalidInput("dictionary_train needs a nonempty dictionary")
    if loss not in LOSSES:
        raise InvalidInput("loss must be 'squared' or 'hinge'")
    A, y = ds.A, ds.y
    if y is None:
        raise InvalidInput("dictionary_train needs scalar targets")
    equality = beta == 0.0
    if equality and loss != "squared":
        raise InvalidInput("equality mode (beta = 0) is defined for the squared loss")
    use_bias = any(nrn.b is not None for nrn in neurons)
    Phi = _features(A, neurons)

    if equality:
        w, rep = basis_pursuit(Phi, y, cfg)
        w = _sparsify_equality(Phi, w, y, max(1.0, float(np.abs(y).max())))
        w = _reduce_to_basic_support(Phi, w)
        v, _ = l1_dual(Phi, y, zero_sum=use_bias, cfg=cfg)
    elif loss == "squared":
        w, rep = lasso(Phi, y, beta, cfg)
        w = _polish_lasso_support(Phi, w, y, beta)
        w = _reduce_to_basic_support(Phi, w)
        v = _recompute_dual(Phi, w, y, beta, loss, use_bias)
    else:
        w, rep = l1_svm(Phi, y, beta, cfg)
        v = _recompute_dual(Phi, w, y, beta, loss, use_bias)

    cert, gap, primal, dual = _certify(A, y, Phi, w, v, beta, loss, equality, use_bias,
                                       restarts, seed)
    net = Network(neurons=list(neurons), w=w,
                  has_bias=all(nrn.b is not None for nrn in neurons))
    report = TrainReport(
        primal_objective=primal,
        dual_objective=dual,
        gap=gap,
        rounds=1,
        neurons_added=len(neurons),
        converged=bool(rep.converged),
        history=[(1, gap)],
        meta={"max_constraint": cert.max_constraint,
              "verified_neurons": cert.verified_neurons},
    )
    return net, report


def _certify(A, y, Phi, w, v, beta, loss, equality, use_bias, restarts, seed):
    """Scale a dual candidate into a certificate; returns (cert, gap, primal, dual)."""
    searched, _ = max_correlation(A, v, use_bias=use_bias, restarts=restarts, seed=seed)
    max_constraint = max(float(searched), _dict_sup(Phi, v))
    lam = max(1.0, max_constraint)
    v_cert = v / lam
    if equality:
        K = max(1.0, 2.0 * (np.abs(v).max() if v.size else 0.0))
        primal = _primal_value(Phi, w, y, beta, loss, True, K)
    else:
        primal = _primal_value(Phi, w, y, beta, loss, False, 0.0)
    dual = _dual_value(v_cert, y, beta, loss, equality)
    corr = np.abs(Phi.T @ v_cert) if Phi.size else np.zeros(0)
    nonzero = np.abs(w) > 1e-12 * (1.0 + (np.abs(w).max() if w.size else 0.0))
    verified = int(np.sum(nonzero & (corr >= 1.0 - 1e-5) & (corr <= 1.0 + 1e-5)))
    cert = DualCertificate(v=v_cert, max_constraint=max_constraint, verified_neurons=verified)
    return cert, primal - dual, primal, dual


# ---------------------------------------------------------------------------
# exact convex program for spike-free data
# ---------------------------------------------------------------------------


def spikefree_train(ds, beta: float, loss: str = "squared",
                    cfg: SolverConfig | None = None, restarts: int = 200, seed: int = 0):
    """Solve the two-sided cone-constrained convex program and lift the result.

    The program min loss(A(w1 - w2), y) + beta(||w1|| + ||w2||) over
    A w1 >= 0, A w2 >= 0 is exact on spike-free data; its solution lifts to
    the two-neuron network u1 = w1/||w1|| (positive output weight ||w1||),
    u2 = w2/||w2|| (negative output weight). ``spike_free_check`` runs first;
    anything short of a positive certificate sets ``meta["warning"]``.
    """
    from .solvers import spikefree_convex_train, spikefree_min_norm

    if loss not in LOSSES:
        raise InvalidInput("loss must be 'squared' or 'hinge'")
    A, y = ds.A, ds.y
    if y is None:
        raise InvalidInput("spikefree_train needs scalar targets")
    equality = beta == 0.0
    if equality and loss != "squared":
        raise InvalidInput("equality mode (beta = 0) is defined for the squared loss")
    verdict = spike_free_check(A, cfg)
    if equality:
        w1, w2, rep = spikefree_min_norm(A, y, cfg)
    else:
        w1, w2, rep = spikefree_convex_train(A, y, beta, loss, cfg)

    neurons = []
    weights = []
    for vec, sign in ((w1, 1.0), (w2, -1.0)):
        nv = float(np.linalg.norm(vec))
        if nv > 1e-10 * (1.0 + float(np.abs(A).max())):
            neurons.append(Neuron(u=vec / nv, provenance="general-direction"))
            weights.append(sign * nv)
    net = Network(neurons=neurons, w=np.array(weights), has_bias=False)

    Phi = _features(A, neurons)
    w = np.asarray(weights)
    if equality:
        v, _ = l1_dual(Phi, y, zero_sum=False, cfg=cfg) if neurons else (np.zeros(A.shape[0]), None)
    else:
        v = _recompute_dual(Phi, w, y, beta, loss, False)
    cert, gap, primal, dual = _certify(A, y, Phi, w, v, beta, loss, equality, False,
                                       restarts, seed)
    report = TrainReport(
        primal_objective=primal,
        dual_objective=dual,
        gap=gap,
        rounds=1,
        neurons_added=net.m,
        converged=bool(rep.converged),
        history=[(1, gap)],
        meta={
            "warning": verdict.status != "certified-spike-free",
            "spike_free_status": verdict.status,
            "program_objective": float(rep.objective),
            "max_constraint": cert.max_constraint,
        },
    )
    return net, report


# ---------------------------------------------------------------------------
# duality-gap certification for an arbitrary network
# ---------------------------------------------------------------------------


def duality_gap(ds, net: Network, beta: float, loss: str = "squared",
                cfg: SolverConfig | None = None, restarts: int = 200, seed: int = 0):
    """Certified duality gap of a trained network.

    The dual candidate comes from the master optimality conditions (residual
    over beta for the squared loss, the l1 dual in equality mode, KKT hinge
    multipliers otherwise); feasibility is then enforced by scaling with the
    largest constraint value the verification search finds, so the returned
    gap is a valid optimality bound even when the candidate was infeasible.

    Returns
    -------
    (DualCertificate, gap)
    """
    if loss not in LOSSES:
        raise InvalidInput("loss must be 'squared' or 'hinge'")
    A, y = ds.A, ds.y
    if y is None:
        raise InvalidInput("duality_gap covers scalar outputs; vector duals live in "
                           "vector_cutting_plane reports")
    equality = beta == 0.0
    if equality and loss != "squared":
        raise InvalidInput("equality mode (beta = 0) is defined for the squared loss")
    if net.W is not None:
        raise InvalidInput("duality_gap certifies scalar-output networks")
    use_bias = any(nrn.b is not None for nrn in net.neurons)
    Phi = net.features(A)
    w = net.w if net.w is not None else np.zeros(0)

    if equality:
        if net.m:
            v, _ = l1_dual(Phi, y, zero_sum=use_bias, cfg=cfg)
        else:
            v = np.zeros(A.shape[0])
    else:
        v = _recompute_dual(Phi, w, y, beta, loss, use_bias)
    cert, gap, *_ = _certify(A, y, Phi, w, v, beta, loss, equality, use_bias, restarts, seed)
    return cert, gap


# ---------------------------------------------------------------------------
# vector-output cutting plane
# ---------------------------------------------------------------------------


def _vector_oracle(A, V, variant, cfg, seed):
    """Relaxed violation search for vector duals.

    group-l2 maximizes ||V^T A u||_2 over the cone-ball: the per-class signed
    extremal neurons (cone_ball_lp on each dual column, both senses) seed an
    alternating refinement in u (exact cone LP for a fixed combination g) and
    g (the normalized image V^T (A u)_+), together with the top combination
    of V^T A and seeded random mixes. l1-per-class solves the per-column
    scalar oracles directly.
    """
    o = V.shape[1]
    cands = []
    best = 0.0
    if variant == "l1-per-class":
        for k in range(o):
            val, out = _cone_oracle(A, V[:, k], cfg)
            best = max(best, val)
            cands.extend(out)
        return best, cands
    ocfg = cfg if cfg is not None else SolverConfig(max_iters=4000)

    def probe(g, refine):
        nonlocal best
        ng = np.linalg.norm(g)
        if ng <= 1e-30:
            return
        g = g / ng
        u = None
        val = 0.0
        for _ in range(4 if refine else 1):
            u_new, _, _ = cone_ball_lp(A, V @ g, "max", ocfg)
            unit = _safe_unit(u_new)
            if unit is None:
                break
            z = V.T @ relu(A @ unit)
            nz = float(np.linalg.norm(z))
            if nz <= val + 1e-12:
                break
            u, val = unit, nz
            g = z / nz
        if u is not None and val > 0.0:
            cands.append((val, Neuron(u=u, provenance="cutting-plane")))
            best = max(best, val)

    # per-class signed extremal neurons, evaluated under the group norm
    for k in range(o):
        for s in (1.0, -1.0):
            probe(s * np.eye(o)[k], refine=False)
    # the unconstrained maximizer of ||V^T A u|| seeds the cone-bound search
    left = np.linalg.svd(V.T @ A, full_matrices=False)[0]
    for s in (1.0, -1.0):
        probe(s * left[:, 0], refine=True)
    rng = np.random.default_rng((seed, 6007))
    probe(rng.standard_normal(o), refine=True)
    return best, cands


def _sparsify_group_equality(Phi, W, Y, yscale, K):
    """Group version of the equality sparsifier: concentrate row weight.

    The splitting master spreads weight across near-parallel atoms without
    changing the objective meaningfully; refit the interpolation constraint
    on top-row-norm subsets and keep the smallest one that does not increase
    the exact-penalty value.
    """
    if W.shape[0] == 0:
        return W

    def value(Wc):
        resid = Y - Phi @ Wc
        return (float(np.sqrt((Wc * Wc).sum(axis=1)).sum())
                + K * float(np.sqrt((resid * resid).sum(axis=1)).sum()))

    cur = value(W)
    norms = np.sqrt((W * W).sum(axis=1))
    seq = _diverse_order(Phi, np.argsort(-norms, kind="stable"))
    for k in range(1, W.shape[0] + 1):
        S = np.asarray(seq[:k])
        WS, *_ = np.linalg.lstsq(Phi[:, S], Y, rcond=None)
        if float(np.abs(Phi[:, S] @ WS - Y).max()) > 1e-8 * yscale:
            continue
        cand = np.zeros_like(W)
        cand[S] = WS
        if value(cand) <= cur + 1e-9 * (1.0 + cur):
            return cand
    return W


def _vector_equality_dual(ext, Wext, Y, fallback):
    """KKT refit of the equality-mode group dual.

    The splitting solver's dual estimate degrades once the dictionary holds
    near-parallel columns, so rebuild V from the active-group stationarity
    conditions phi_g^T V = W_g / ||W_g|| (min-norm solve), then ascend along
    the component of Y outside the active span, which leaves every active
    equality untouched and can only increase <V, Y>.
    """
    norms = np.sqrt((Wext * Wext).sum(axis=1))
    scale = max(float(norms.max(initial=0.0)), 1e-30)
    act = norms > 1e-9 * scale
    if not np.any(act):
        return fallback
    E = ext[:, act]
    R = Wext[act] / norms[act, None]
    V0, *_ = np.linalg.lstsq(E.T, R, rcond=None)
    if float(np.abs(E.T @ V0 - R).max()) > 1e-6:
        return fallback
    C, *_ = np.linalg.lstsq(E, Y, rcond=None)
    D = Y - E @ C
    if float(np.abs(D).max()) > 1e-9:
        t = np.inf
        for j in np.nonzero(~act)[0]:
            p0 = ext[:, j] @ V0
            pd = ext[:, j] @ D
            a = float(pd @ pd)
            if a <= 1e-18:
                continue
            b = float(p0 @ pd)
            c = float(p0 @ p0) - 1.0
            if c >= 0.0:
                t = 0.0
                break
            t = min(t, (-b + np.sqrt(max(b * b - a * c, 0.0))) / a)
        if np.isfinite(t) and t > 0.0:
            V0 = V0 + t * D
    return V0


def _is_new_direction(u, neurons, min_gap=1e-6):
    """True when u is at least ~sqrt(2*min_gap) radians from every atom."""
    for nrn in neurons:
        if float(u @ nrn.u) > 1.0 - min_gap:
            return False
    return True


def _polish_vector_atoms(A, neurons, W, V, cfg):
    """Re-optimize active atoms in place against the current dual.

    Each active atom contributes phi_j w_j^T to the fit; for the combination
    g = w_j / ||w_j|| it serves, the best cone atom solves an exact linear
    program max (V g)^T (A u)_+ over the unit ball. Replacing atoms in place
    (improve-only) refines them without growing ladders of near-duplicate
    columns that degrade the master's conditioning.
    """
    if W.shape[0] == 0:
        return 0
    pcfg = cfg if cfg is not None else SolverConfig(max_iters=4000)
    norms = np.sqrt((W * W).sum(axis=1))
    scale = max(float(norms.max(initial=0.0)), 1e-30)
    changed = 0
    for j in np.nonzero(norms > 1e-9 * scale)[0]:
        g = W[j] / norms[j]
        d = V @ g
        u_new, _, _ = cone_ball_lp(A, d, "max", pcfg)
        unit = _safe_unit(u_new)
        if unit is None:
            continue
        cur = float((V.T @ relu(A @ neurons[j].u)) @ g)
        new = float((V.T @ relu(A @ unit)) @ g)
        if new > cur + 1e-12 * (1.0 + abs(cur)):
            neurons[j] = Neuron(u=unit, provenance="cutting-plane")
            changed += 1
    return changed


def _vector_atom_sup(Phi, V, variant):
    if not Phi.size:
        return 0.0
    C = Phi.T @ V  # m x o
    if variant == "group-l2":
        return float(np.sqrt((C * C).sum(axis=1)).max())
    return float(np.abs(C).max())


def _vector_primal(Phi, W, Y, beta, variant, equality, K):
    F = Phi @ W if W.size else np.zeros_like(Y)
    if variant == "group-l2":
        reg = float(np.sqrt((W * W).sum(axis=1)).sum()) if W.size else 0.0
    else:
        reg = float(np.abs(W).sum())
    if equality:
        return reg + K * float(np.abs(Y - F).sum())
    return beta * reg + 0.5 * float(np.sum((F - Y) ** 2))


def _vector_dual_value(V, Y, beta, equality):
    if equality:
        return float(np.sum(V * Y))
    return float(beta * np.sum(V * Y) - 0.5 * beta**2 * np.sum(V * V))


def vector_cutting_plane(ds, variant: str = "group-l2", beta: float = 0.0,
                         cfg: SolverConfig | None = None, viol_tol: float = VIOLATION_TOL,
                         max_rounds: int = MAX_ROUNDS, seed: int = 0):
    """Cutting-plane training for vector outputs (squared loss, no bias).

    variant "group-l2" penalizes the per-neuron row norms of the output
    matrix (master: group lasso; dual constraint ||V^T (A u)_+||_2 <= 1);
    "l1-per-class" penalizes entrywise and decouples into per-class scalar
    problems sharing one dictionary (dual constraint per class column).

    Returns (Network with W, TrainReport); the report meta carries the final
    DualCertificate carrying V.
    """
    if variant not in VARIANTS:
        raise InvalidInput("variant must be 'group-l2' or 'l1-per-class'")
    if beta < 0:
        raise InvalidInput("beta must be nonnegative")
    A = ds.A
    Y = ds.Y if ds.Y is not None else ds.y.reshape(-1, 1)
    n, o = Y.shape
    equality = beta == 0.0
    yscale = max(1.0, float(np.abs(Y).max()))
    K = 1e3 * yscale
    bumps = 0

    neurons: list[Neuron] = []
    best = None  # (primal, neurons snapshot, W)
    dual_best = -np.inf
    history = []
    converged = False
    violation = np.inf
    rounds = 0
    stall = 0
    V = Y.copy()

    while rounds < max_rounds:
        rounds += 1
        Phi = _features(A, neurons)
        m = len(neurons)
        if m == 0:
            W_new = np.zeros((0, o))
            V = Y.copy() if equality else Y / beta
        elif equality:
            # near-parallel refinement atoms demand tight master tolerances,
            # otherwise the splitting solver parks on an almost-flat face with
            # a useless dual estimate
            mcfg = cfg if cfg is not None else SolverConfig(
                max_iters=60000, abs_tol=1e-12, rel_tol=1e-10)
            ext = np.hstack([Phi, np.eye(n) / K])
            if variant == "group-l2":
                Wext, rep = group_lasso_eq(ext, Y, None, mcfg)
                W_atoms = _sparsify_group_equality(Phi, Wext[:m], Y, yscale, K)
                Wext = np.vstack([W_atoms, K * (Y - Phi @ W_atoms)])
                V = rep.dual
                V_refit = _vector_equality_dual(ext, Wext, Y, None)
                if V_refit is not None and (
                        V is None or float(np.sum(V_refit * Y)) > float(np.sum(V * Y))):
                    V = V_refit
            else:
                Wext = np.zeros((ext.shape[1], o))
                Vcols = []
                for k in range(o):
                    wk, _ = basis_pursuit(ext, Y[:, k], mcfg)
                    vk, _ = l1_dual(ext, Y[:, k], cfg=mcfg)
                    Wext[:, k] = wk
                    Vcols.append(vk)
                V = np.stack(Vcols, axis=1)
            W_new = Wext[:m]
        elif variant == "group-l2":
            W_new, _ = group_lasso(Phi, Y, beta, None, cfg)
            V = (Y - Phi @ W_new) / beta
        else:
            W_new = np.stack([lasso(Phi, Y[:, k], beta, cfg)[0] for k in range(o)], axis=1)
            V = (Y - Phi @ W_new) / beta
        primal_new = _vector_primal(Phi, W_new, Y, beta, variant, equality, K)
        if best is None or primal_new <= best[0]:
            best = (primal_new, list(neurons), W_new)

        violation, candidates = _vector_oracle(A, V, variant, cfg, seed)
        lam = max(1.0, violation, _vector_atom_sup(Phi, V, variant))
        dual_best = max(dual_best, _vector_dual_value(V / lam, Y, beta, equality))
        history.append((rounds, best[0] - dual_best))

        if violation <= 1.0 + viol_tol:
            if equality:
                resid = float(np.abs(Y - Phi @ W_new).max()) if m else float(np.abs(Y).max())
                if resid > 1e-6 * yscale:
                    if bumps >= 2:
                        raise Infeasible("vector targets stay unreachable", residual=resid)
                    K *= 100.0
                    bumps += 1
                    best = None
                    continue
            converged = True
            break
        fit_ok = (not equality) or m == 0 or (
            float(np.abs(Y - Phi @ W_new).max()) <= 1e-3 * yscale)
        polished = _polish_vector_atoms(A, neurons, W_new, V, cfg) if fit_ok else 0
        # Append only atoms that open a genuinely new direction; ladders of
        # near-duplicate columns degrade the master's conditioning, and the
        # in-place polish refines existing atoms past that resolution.
        added = 0
        for val, nrn in candidates:
            if val > 1.0 + viol_tol and _is_new_direction(nrn.u, neurons):
                neurons.append(nrn)
                added += 1
        if added == 0:
            stall += 1
            if polished == 0 or stall >= 3:
                break
        else:
            stall = 0

    primal_best, best_neurons, W = best if best is not None else (np.inf, [], np.zeros((0, o)))
    Phi = _features(A, neurons)
    row_norm = np.sqrt((W * W).sum(axis=1)) if W.size else np.zeros(0)
    keep = row_norm > 1e-10 * (1.0 + (row_norm.max() if row_norm.size else 0.0))
    net = Network(neurons=[nrn for nrn, k in zip(best_neurons, keep) if k], W=W[keep],
                  has_bias=False)
    lamf = max(1.0, violation, _vector_atom_sup(Phi, V, variant))
    cert = DualCertificate(V=V / lamf, max_constraint=float(max(violation,
                           _vector_atom_sup(Phi, V, variant))), verified_neurons=int(keep.sum()))
    report = TrainReport(
        primal_objective=primal_best,
        dual_objective=dual_best,
        gap=primal_best - dual_best,
        rounds=rounds,
        neurons_added=len(neurons),
        converged=converged,
        history=history,
        meta={"violation": float(violation), "variant": variant, "certificate": cert,
              "atoms": list(neurons)},
    )
    return net, report


# ---------------------------------------------------------------------------
# nonconvex projected-gradient baseline
# ---------------------------------------------------------------------------


def reference_gd_train(ds, m: int, beta: float, init_std: float, seed: int = 0,
                       cfg: SolverConfig | None = None, use_bias: bool = False,
                       loss: str = "squared", step: float | None = None):
    """Projected (sub)gradient baseline on the nonconvex two-layer objective.

    Full-batch descent on 0.5||f - y||^2 (or the hinge) + beta ||w||_1 with
    each hidden vector projected back to the unit ball after its step and the
    output weights updated by the soft-threshold prox. The step is fixed; if
    the run diverges it deterministically restarts from the same init with a
    five-fold smaller step. Finally the hidden norms are folded into the
    output weights so the result is a valid unit-norm Network whose objective
    is directly comparable to the convex solvers'.
    """
    if m < 1:
        raise InvalidInput("need at least one hidden unit")
    if loss not in LOSSES:
        raise InvalidInput("loss must be 'squared' or 'hinge'")
    A, y = ds.A, ds.y
    if y is None:
        raise InvalidInput("reference_gd_train needs scalar targets")
    n, d = A.shape
    iters = cfg.max_iters if cfg is not None else 200000
    rng = np.random.default_rng(seed)
    U0 = init_std * rng.standard_normal((d, m))
    b0 = init_std * rng.standard_normal(m) if use_bias else None
    w0 = init_std * rng.standard_normal(m)
    smax2 = float(np.linalg.norm(A, 2)) ** 2

    def objective(U, b, w):
        Z = A @ U + (b if b is not None else 0.0)
        f = relu(Z) @ w
        reg = beta * float(np.abs(w).sum())
        if loss == "squared":
            return 0.5 * float(np.sum((f - y) ** 2)) + reg
        return float(np.maximum(0.0, 1.0 - y * f).sum()) + reg

    eta = step if step is not None else 0.5 / (smax2 * (1.0 + m * init_std**2) + n)
    base_obj = objective(U0, b0, w0)
    it_done = 0
    for attempt in range(10):
        U, w = U0.copy(), w0.copy()
        b = None if b0 is None else b0.copy()
        prev = np.inf
        diverged = False
        for it in range(1, iters + 1):
            Z = A @ U + (b if b is not None else 0.0)
            Phi = relu(Z)
            f = Phi @ w
            if loss == "squared":
                df = f - y
            else:
                df = -y * (y * f < 1.0)
            gw = Phi.T @ df
            GZ = (df[:, None] * w[None, :]) * (Z > 0.0)
            gU = A.T @ GZ
            U = U - eta * gU
            norms = np.maximum(np.linalg.norm(U, axis=0), 1.0)
            U = U / norms
            if b is not None:
                b = b - eta * GZ.sum(axis=0)
            w = w - eta * gw
            if beta > 0.0:
                w = np.sign(w) * np.maximum(np.abs(w) - eta * beta, 0.0)
            if it % 250 == 0 or it == iters:
                cur = objective(U, b, w)
                if not np.isfinite(cur) or cur > 10.0 * (base_obj + 1.0):
                    diverged = True
                    break
                if abs(prev - cur) <= 1e-15 * (1.0 + cur):
                    break
                prev = cur
        it_done = it
        if not diverged:
            break
        eta /= 5.0

    neurons = []
    weights = []
    for j in range(m):
        nu = float(np.linalg.norm(U[:, j]))
        if w[j] == 0.0 or nu <= 1e-300:
            continue
        bj = None if b is None else float(b[j] / nu)
        neurons.append(Neuron(u=U[:, j] / nu, b=bj, provenance="general-direction"))
        weights.append(float(w[j] * nu))
    net = Network(neurons=neurons, w=np.array(weights), has_bias=use_bias and bool(neurons))
    f = net.predict(A)
    reg = beta * float(np.abs(np.array(weights)).sum()) if weights else 0.0
    if loss == "squared":
        data_term = 0.5 * float(np.sum((f - y) ** 2))
    else:
        data_term = float(np.maximum(0.0, 1.0 - y * f).sum())
    primal = data_term + reg
    report = TrainReport(
        primal_objective=primal,
        dual_objective=0.0,
        gap=primal,
        rounds=it_done,
        neurons_added=net.m,
        converged=bool(it_done < iters),
        history=[(it_done, primal)],
        meta={"step": float(eta), "loss_term": data_term, "seed": seed,
              "init_std": float(init_std)},
    )
    return net, report


# ---------------------------------------------------------------------------
# gap versus dictionary size
# ---------------------------------------------------------------------------


def gap_sweep(ds, beta: float = 0.0, loss: str = "squared", m_values=None,
              cfg: SolverConfig | None = None, restarts: int = 200, seed: int = 0):
    """Duality gap as a function of dictionary-prefix size.

    Builds an atom pool (exact enumerations for 1-D and rank-one data, a
    cutting-plane harvest padded with seeded random directions otherwise),
    orders it support-first by the full-pool solution, then reports
    (m, gap) for each prefix with a running best primal and dual, which makes
    the gap column nonincreasing by construction. Equality-mode prefixes that
    cannot interpolate get an infinite gap.
    """
    A, y = ds.A, ds.y
    if y is None:
        raise InvalidInput("gap_sweep needs scalar targets")
    n, d = A.shape
    if m_values is None:
        m_values = list(range(1, n + 2))
    equality = beta == 0.0
    yscale = max(1.0, float(np.abs(y).max()))

    if d == 1:
        pool = enumerate_extremes_1d(A[:, 0])
    else:
        ro = _rank_one_factors(A)
        if ro is not None:
            pool = enumerate_extremes_rankone(ro[0], ro[1])
        else:
            _, rep = cutting_plane_train(ds, use_bias=False, beta=beta, loss=loss, cfg=cfg)
            pool = list(rep.meta["atoms"])
            j = 0
            while len(pool) < max(m_values):
                g = np.random.default_rng((seed, 104729, j)).standard_normal(d)
                j += 1
                unit = _safe_unit(g)
                if unit is None:
                    continue
                key = _dedup_key(unit, None)
                if key not in {_dedup_key(nr.u, nr.b) for nr in pool}:
                    pool.append(Neuron(u=unit, provenance="general-direction"))
    if len(pool) < max(m_values):
        raise InvalidInput(f"atom pool has {len(pool)} neurons; sweep needs {max(m_values)}")

    full_net, _ = dictionary_train(ds, pool, beta, loss, cfg, restarts, seed)
    full_w = full_net.w
    order = sorted(range(len(pool)), key=lambda j: (-abs(full_w[j]), j))

    rows = []
    primal_best = np.inf
    dual_best = -np.inf
    for m in m_values:
        prefix = [pool[j] for j in order[:m]]
        feasible = True
        if equality:
            Phi = _features(A, prefix)
            w_ls, *_ = np.linalg.lstsq(Phi, y, rcond=None)
            feasible = float(np.abs(Phi @ w_ls - y).max()) <= 1e-7 * yscale
        if feasible:
            try:
                _, rep = dictionary_train(ds, prefix, beta, loss, cfg, restarts, seed)
                primal_best = min(primal_best, rep.primal_objective)
                dual_best = max(dual_best, rep.dual_objective)
            except Infeasible:
                pass
        gap = primal_best - dual_best if np.isfinite(primal_best) else np.inf
        rows.append((int(m), float(gap)))
    return rows


def save_gap_csv(rows, path):
    """Write (m, gap) rows as CSV with full-precision floats."""
    lines = ["m,gap"]
    for m, gap in rows:
        lines.append(f"{int(m)},{float(gap):.17g}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
