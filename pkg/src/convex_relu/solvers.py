"""Hand-rolled first-order convex solvers for every subproblem in the package.

All solvers are ADMM or FISTA variants written directly on numpy arrays; there
is no external optimization dependency. Each returns ``(solution, SolveReport)``
and, where a dual certificate exists, attaches it to ``SolveReport.dual``.
Final iterates are polished on the detected support / active set so that small
fixtures resolve to near machine precision.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import Infeasible, InvalidInput
from .linalg import as_matrix, pseudo_inverse, svd


@dataclass
class SolverConfig:
    """Shared solver knobs.

    ``rho`` is the initial ADMM penalty; it self-adapts by doubling or halving
    whenever the primal and dual residuals drift more than 10x apart.
    """

    max_iters: int = 20000
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6
    rho: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidInput("max_iters must be >= 1")
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            raise InvalidInput("tolerances must be positive")


@dataclass
class SolveReport:
    """Audit trail of a solver call."""

    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    converged: bool
    wall_time_ms: float
    dual: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def soft_threshold(x, kappa):
    """Elementwise shrinkage, the prox of kappa*||.||_1."""
    return np.sign(x) * np.maximum(np.abs(x) - kappa, 0.0)


def block_soft_threshold(X, kappa, groups):
    """Groupwise shrinkage, the prox of kappa * sum of group Frobenius norms."""
    Z = np.zeros_like(X)
    for g in groups:
        ng = np.linalg.norm(X[g])
        if ng > kappa:
            Z[g] = (1.0 - kappa / ng) * X[g]
    return Z


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def _orth_basis(cols):
    """Orthonormal basis of the span of the given stacked columns."""
    M = np.column_stack(cols)
    f = svd(M)
    return f.U_left


def _ms():
    return time.perf_counter() * 1000.0


RHO_PERIOD = 50  # adapting every iteration stalls ADMM; adapt periodically


def _rho_update(rho, scaled_dual, r_pri, r_dua, it):
    """Self-adaptive penalty: double/halve on a 10x residual imbalance."""
    if it % RHO_PERIOD != 0:
        return rho, scaled_dual
    if r_pri > 10.0 * r_dua:
        return rho * 2.0, scaled_dual / 2.0
    if r_dua > 10.0 * r_pri:
        return rho / 2.0, scaled_dual * 2.0
    return rho, scaled_dual


def _vec(y, n=None, name="y"):
    y = np.asarray(y, dtype=float).ravel()
    if n is not None and y.size != n:
        raise InvalidInput(f"{name} must have length {n}")
    if not np.all(np.isfinite(y)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return y


# ---------------------------------------------------------------------------
# equality-constrained l1 / group-l2 minimization
# ---------------------------------------------------------------------------


def _check_feasible(B, Y):
    """Least-squares feasibility gate for equality-constrained programs."""
    W_ls, *_ = np.linalg.lstsq(B, Y, rcond=None)
    res = np.abs(B @ W_ls - Y).max()
    if res > max(1e-7, 1e-6 * max(1.0, np.abs(Y).max())):
        raise Infeasible(f"targets not in the column space (residual {res:.3e})", residual=res)
    return W_ls


def basis_pursuit(B, y, cfg: SolverConfig | None = None):
    """Minimize ||w||_1 subject to B w = y.

    ADMM splits the affine constraint (handled by projection through a cached
    pseudo-inverse) from the l1 prox. The final iterate is polished by a
    least-squares solve on the detected support, and a dual vector v with
    ||B^T v||_inf <= 1 and v^T y = ||w||_1 is attached to the report.

    Parameters
    ----------
    B : (n, k) array
    y : (n,) array, must lie in the column space of B
    cfg : SolverConfig, optional

    Returns
    -------
    w : (k,) array
    report : SolveReport
    """
    cfg = cfg or SolverConfig()
    t0 = _ms()
    B = as_matrix(B, "B")
    n, k = B.shape
    y = _vec(y, n)
    _check_feasible(B, y)

    Bp = pseudo_inverse(B)
    y_proj = B @ (Bp @ y)  # equals y for feasible systems

    rho = cfg.rho
    z = Bp @ y
    u = np.zeros(k)
    w = z.copy()
    r_pri = r_dua = np.inf
    eps_pri = eps_dua = 0.0
    it = 0
    for it in range(1, cfg.max_iters + 1):
        x = z - u
        w = x - Bp @ (B @ x - y)
        z_old = z
        z = soft_threshold(w + u, 1.0 / rho)
        u = u + w - z
        r_pri = np.linalg.norm(w - z)
        r_dua = rho * np.linalg.norm(z - z_old)
        eps_pri = np.sqrt(k) * cfg.abs_tol + cfg.rel_tol * max(
            np.linalg.norm(w), np.linalg.norm(z)
        )
        eps_dua = np.sqrt(k) * cfg.abs_tol + cfg.rel_tol * rho * np.linalg.norm(u)
        if r_pri <= eps_pri and r_dua <= eps_dua:
            break
        rho, u = _rho_update(rho, u, r_pri, r_dua, it)

    # support polish: exact least-squares refit on the nonzeros of the sparse
    # iterate, accepted only when it stays feasible and does not grow the norm
    w_best = w
    supp = np.where(np.abs(z) > 1e-8 * max(1.0, np.abs(z).max()))[0]
    if supp.size:
        ws, *_ = np.linalg.lstsq(B[:, supp], y, rcond=None)
        cand = np.zeros(k)
        cand[supp] = ws
        feas = np.abs(B @ cand - y).max()
        slack = np.abs(y_proj - y).max() + 1e-9
        if feas <= slack and np.abs(cand).sum() <= np.abs(w_best).sum() + 1e-9:
            w_best = cand

    v = _l1_equality_dual(B, y, w_best, cfg)
    report = SolveReport(
        objective=float(np.abs(w_best).sum()),
        primal_residual=float(max(r_pri, np.abs(B @ w_best - y).max())),
        dual_residual=float(r_dua),
        iterations=it,
        converged=bool(r_pri <= eps_pri and r_dua <= eps_dua),
        wall_time_ms=_ms() - t0,
        dual=v,
        extra={"eps_primal": float(eps_pri), "eps_dual": float(eps_dua)},
    )
    return w_best, report


def _l1_equality_dual(B, y, w, cfg):
    """Dual vector for min ||w||_1 s.t. Bw = y at the solved w.

    First tries the minimum-norm interpolation of the support signs (exact
    complementary slackness, v in the span of the active columns); falls back
    to the l1_dual solver when that candidate violates inactive constraints.
    """
    supp = np.where(np.abs(w) > 1e-9 * max(1.0, np.abs(w).max()))[0]
    if supp.size:
        S = B[:, supp]
        v = pseudo_inverse(S.T) @ np.sign(w[supp])
        if np.abs(B.T @ v).max() <= 1.0 + 1e-6:
            return v
    v, rep = l1_dual(B, y, cfg=cfg)
    return v if rep.converged or np.abs(B.T @ v).max() <= 1.0 + 1e-6 else v


def l1_dual(B, y, zero_sum: bool = False, cfg: SolverConfig | None = None):
    """Maximize v^T y subject to ||B^T v||_inf <= 1 (and optionally 1^T v = 0).

    Works in reduced coordinates v = Q xi restricted to span([B | y | 1]) so
    the reported maximizer is the canonical one inside that span; components
    orthogonal to it change neither the constraints nor the objective.
    """
    cfg = cfg or SolverConfig()
    t0 = _ms()
    B = as_matrix(B, "B")
    n, k = B.shape
    y = _vec(y, n)

    cols = [B, y.reshape(-1, 1)]
    if zero_sum:
        cols.append(np.ones((n, 1)))
    Q = _orth_basis(cols)
    M = B.T @ Q  # k x r
    c = Q.T @ y
    r = Q.shape[1]
    q1 = Q.T @ np.ones(n) if zero_sum else None

    rho = cfg.rho
    G = M.T @ M + 1e-12 * np.eye(r)

    def factor(rho_val):
        if zero_sum:
            K = np.zeros((r + 1, r + 1))
            K[:r, :r] = rho_val * G
            K[:r, r] = q1
            K[r, :r] = q1
            return np.linalg.inv(K)
        return np.linalg.inv(rho_val * G)

    Kinv = factor(rho)
    xi = np.zeros(r)
    t = np.clip(M @ xi, -1.0, 1.0)
    u = np.zeros(k)
    it = 0
    r_pri = r_dua = np.inf
    eps_pri = eps_dua = 0.0
    for it in range(1, cfg.max_iters + 1):
        rhs = c + rho * (M.T @ (t - u))
        if zero_sum:
            xi = (Kinv @ np.append(rhs, 0.0))[:r]
        else:
            xi = Kinv @ rhs
        Mxi = M @ xi
        t_old = t
        t = np.clip(Mxi + u, -1.0, 1.0)
        u = u + Mxi - t
        r_pri = np.linalg.norm(Mxi - t)
        r_dua = rho * np.linalg.norm(M.T @ (t - t_old))
        eps_pri = np.sqrt(k) * cfg.abs_tol + cfg.rel_tol * max(
            np.linalg.norm(Mxi), np.linalg.norm(t)
        )
        eps_dua = np.sqrt(r) * cfg.abs_tol + cfg.rel_tol * rho * np.linalg.norm(M.T @ u)
        if r_pri <= eps_pri and r_dua <= eps_dua:
            break
        rho_new, u = _rho_update(rho, u, r_pri, r_dua, it)
        if rho_new != rho:
            rho = rho_new
            Kinv = factor(rho)

    v = Q @ xi
    if zero_sum:
        v = v - v.mean()
    denom = np.abs(B.T @ v).max() if k else 0.0
    if denom > 1.0:
        v = v / denom
    report = SolveReport(
        objective=float(v @ y),
        primal_residual=float(r_pri),
        dual_residual=float(r_dua),
        iterations=it,
        converged=bool(r_pri <= eps_pri and r_dua <= eps_dua),
        wall_time_ms=_ms() - t0,
        extra={"eps_primal": float(eps_pri), "eps_dual": float(eps_dua)},
    )
    return v, report


def group_lasso_eq(B, Y, groups=None, cfg: SolverConfig | None = None):
    """Minimize the sum of group l2 norms subject to B W = Y.

    Parameters
    ----------
    B : (n, k) array
    Y : (n,) or (n, o) array in the column space of B
    groups : list of index arrays partitioning range(k); singletons if None
    cfg : SolverConfig, optional

    Returns
    -------
    W : array shaped like the unknown (k,) or (k, o)
    report : SolveReport with a dual matrix V satisfying
        ||B_g^T V||_F <= 1 + 1e-6 per group and <V, Y> = objective.
    """
    cfg = cfg or SolverConfig()
    t0 = _ms()
    B = as_matrix(B, "B")
    n, k = B.shape
    squeeze = np.asarray(Y).ndim == 1
    Y = np.asarray(Y, dtype=float).reshape(n, -1)
    groups = _norm_groups(groups, k)
    _check_feasible(B, Y)

    Bp = pseudo_inverse(B)
    rho = cfg.rho
    Z = Bp @ Y
    U = np.zeros_like(Z)
    W = Z.copy()
    it = 0
    r_pri = r_dua = np.inf
    eps_pri = eps_dua = 0.0
    for it in range(1, cfg.max_iters + 1):
        X = Z - U
        W = X - Bp @ (B @ X - Y)
        Z_old = Z
        Z = block_soft_threshold(W + U, 1.0 / rho, groups)
        U = U + W - Z
        r_pri = np.linalg.norm(W - Z)
        r_dua = rho * np.linalg.norm(Z - Z_old)
        eps_pri = np.sqrt(Z.size) * cfg.abs_tol + cfg.rel_tol * max(
            np.linalg.norm(W), np.linalg.norm(Z)
        )
        eps_dua = np.sqrt(Z.size) * cfg.abs_tol + cfg.rel_tol * rho * np.linalg.norm(U)
        if r_pri <= eps_pri and r_dua <= eps_dua:
            break
        rho, U = _rho_update(rho, U, r_pri, r_dua, it)

    obj = _group_norm(W, groups)
    active = [g for g in groups if np.linalg.norm(Z[g]) > 1e-8 * max(1.0, np.abs(Z).max())]
    if active:
        # refit on the active groups; keep when feasible and no worse
        idx = np.concatenate(active)
        Ws, *_ = np.linalg.lstsq(B[:, idx], Y, rcond=None)
        cand = np.zeros_like(W)
        cand[idx] = Ws
        if (
            np.abs(B @ cand - Y).max() <= 1e-8 * max(1.0, np.abs(Y).max()) + 1e-10
            and _group_norm(cand, groups) <= obj + 1e-9
        ):
            W = cand
            obj = _group_norm(W, groups)

    V = _group_equality_dual(B, W, groups, Z)
    report = SolveReport(
        objective=float(obj),
        primal_residual=float(max(r_pri, np.abs(B @ W - Y).max())),
        dual_residual=float(r_dua),
        iterations=it,
        converged=bool(r_pri <= eps_pri and r_dua <= eps_dua),
        wall_time_ms=_ms() - t0,
        dual=V,
        extra={"eps_primal": float(eps_pri), "eps_dual": float(eps_dua)},
    )
    return (W.ravel() if squeeze else W), report


def _norm_groups(groups, k):
    if groups is None:
        return [np.array([j]) for j in range(k)]
    groups = [np.asarray(g, dtype=int) for g in groups]
    flat = np.sort(np.concatenate(groups)) if groups else np.array([], dtype=int)
    if flat.size != k or not np.array_equal(flat, np.arange(k)):
        raise InvalidInput("groups must partition the columns of B")
    return groups


def _group_norm(W, groups):
    return float(sum(np.linalg.norm(W[g]) for g in groups))


def _group_equality_dual(B, W, groups, Z):
    """Minimum-norm dual interpolating the active groups' norm gradients."""
    active = [g for g in groups if np.linalg.norm(W[g]) > 1e-9 * max(1.0, np.abs(W).max())]
    if not active:
        return np.zeros((B.shape[0], W.shape[1]))
    rows = []
    rhs = []
    for g in active:
        rows.append(B[:, g].T)
        rhs.append(W[g] / np.linalg.norm(W[g]))
    V = pseudo_inverse(np.vstack(rows).T).T @ np.vstack(rhs)
    worst = max(np.linalg.norm(B[:, g].T @ V) for g in groups)
    if worst > 1.0 + 1e-6:
        V = V / worst
    return V


# ---------------------------------------------------------------------------
# penalized problems: lasso / group lasso / l1-SVM
# ---------------------------------------------------------------------------


def lasso(B, y, beta, cfg: SolverConfig | None = None):
    """Minimize 0.5*||B w - y||^2 + beta*||w||_1 by FISTA with support polish.

    Parameters
    ----------
    B : (n, k) array
    y : (n,) array
    beta : nonnegative penalty
    cfg : SolverConfig, optional

    Returns
    -------
    w : (k,) array satisfying the stationarity residual bound
        ||B^T(Bw - y) + beta*s||_inf <= 1e-6 * (1 + ||B^T y||_inf)
    report : SolveReport (dual holds (y - Bw)/beta when beta > 0)
    """
    cfg = cfg or SolverConfig()
    t0 = _ms()
    B = as_matrix(B, "B")
    n, k = B.shape
    y = _vec(y, n)
    if beta < 0:
        raise InvalidInput("beta must be nonnegative")

    scale = 1.0 + (np.abs(B.T @ y).max() if k else 0.0)
    if beta == 0.0:
        w, *_ = np.linalg.lstsq(B, y, rcond=None)
        r = B @ w - y
        kkt = np.abs(B.T @ r).max() if k else 0.0
        report = SolveReport(
            objective=float(0.5 * r @ r),
            primal_residual=float(kkt),
            dual_residual=0.0,
            iterations=1,
            converged=bool(kkt <= 1e-6 * scale),
            wall_time_ms=_ms() - t0,
            extra={"kkt_residual": float(kkt)},
        )
        return w, report

    if beta <= 1e-9 * scale:
        # in the vanishing-penalty limit the solution is the minimum-l1 point
        # of the least-squares solution set; solve that limit directly
        w_ls, *_ = np.linalg.lstsq(B, y, rcond=None)
        w, rep_bp = basis_pursuit(B, B @ w_ls, cfg)
        r = B @ w - y
        kkt = _lasso_kkt(B, y, w, beta)
        report = SolveReport(
            objective=float(0.5 * r @ r + beta * np.abs(w).sum()),
            primal_residual=float(kkt),
            dual_residual=0.0,
            iterations=rep_bp.iterations,
            converged=bool(kkt <= 1e-6 * scale),
            wall_time_ms=_ms() - t0,
            dual=(y - B @ w) / beta,
            extra={"kkt_residual": float(kkt)},
        )
        return w, report

    L = max(np.linalg.norm(B, 2) ** 2, 1e-30)
    step = 1.0 / L
    w = np.zeros(k)
    wy = w.copy()
    tk = 1.0
    kkt = np.inf
    it = 0
    target = 0.25e-6 * scale
    for it in range(1, cfg.max_iters + 1):
        g = B.T @ (B @ wy - y)
        w_new = soft_threshold(wy - step * g, step * beta)
        if (wy - w_new) @ (w_new - w) > 0:  # gradient restart heuristic
            tk = 1.0
            wy = w_new
        else:
            tk_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            wy = w_new + ((tk - 1.0) / tk_new) * (w_new - w)
            tk = tk_new
        w = w_new
        if it % 25 == 0 or it == cfg.max_iters:
            kkt = _lasso_kkt(B, y, w, beta)
            if kkt <= target:
                break

    w = _lasso_polish(B, y, w, beta)
    kkt = _lasso_kkt(B, y, w, beta)
    resid = B @ w - y
    report = SolveReport(
        objective=float(0.5 * resid @ resid + beta * np.abs(w).sum()),
        primal_residual=float(kkt),
        dual_residual=0.0,
        iterations=it,
        converged=bool(kkt <= 1e-6 * scale),
        wall_time_ms=_ms() - t0,
        dual=(y - B @ w) / beta,
        extra={"kkt_residual": float(kkt)},
    )
    return w, report


def _lasso_kkt(B, y, w, beta):
    """Stationarity residual of the lasso at w (exact subgradient distance)."""
    g = B.T @ (B @ w - y)
    on = w != 0.0
    res_on = np.abs(g[on] + beta * np.sign(w[on])).max() if on.any() else 0.0
    res_off = max(0.0, np.abs(g[~on]).max() - beta) if (~on).any() else 0.0
    return max(res_on, res_off)


def _lasso_polish(B, y, w, beta):
    """Exact stationary point on the detected support, kept if signs agree."""
    supp = np.where(w != 0.0)[0]
    if not supp.size:
        return w
    S = B[:, supp]
    sgn = np.sign(w[supp])
    ws, *_ = np.linalg.lstsq(S.T @ S, S.T @ y - beta * sgn, rcond=None)
    if np.all(np.sign(ws) == sgn):
        cand = np.zeros_like(w)
        cand[supp] = ws
        if _lasso_kkt(B, y, cand, beta) <= _lasso_kkt(B, y, w, beta):
            return cand
    return w


def group_lasso(B, Y, beta, groups=None, cfg: SolverConfig | None = None):
    """Minimize 0.5*||B W - Y||_F^2 + beta * sum of group l2 norms (FISTA)."""
    cfg = cfg or SolverConfig()
    t0 = _ms()
    B = as_matrix(B, "B")
    n, k = B.shape
    squeeze = np.asarray(Y).ndim == 1
    Y = np.asarray(Y, dtype=float).reshape(n, -1)
    groups = _norm_groups(groups, k)
    if beta < 0:
        raise InvalidInput("beta must be nonnegative")

    L = max(np.linalg.norm(B, 2) ** 2, 1e-30)
    step = 1.0 / L
    W = np.zeros((k, Y.shape[1]))
    WY = W.copy()
    tk = 1.0
    it = 0
    kkt = np.inf
    scale = 1.0 + np.linalg.norm(B.T @ Y)
    for it in range(1, cfg.max_iters + 1):
        G = B.T @ (B @ WY - Y)
        W_new = block_soft_threshold(WY - step * G, step * beta, groups)
        if np.sum((WY - W_new) * (W_new - W)) > 0:
            tk = 1.0
            WY = W_new
        else:
            tk_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            WY = W_new + ((tk - 1.0) / tk_new) * (W_new - W)
            tk = tk_new
        W = W_new
        if it % 25 == 0 or it == cfg.max_iters:
            kkt = _group_lasso_kkt(B, Y, W, beta, groups)
            if kkt <= 0.25e-6 * scale:
                break

    R = B @ W - Y
    obj = 0.5 * np.sum(R * R) + beta * _group_norm(W, groups)
    report = SolveReport(
        objective=float(obj),
        primal_residual=float(kkt),
        dual_residual=0.0,
        iterations=it,
        converged=bool(kkt <= 1e-6 * scale),
        wall_time_ms=_ms() - t0,
        dual=(Y - B @ W) / beta if beta > 0 else None,
        extra={"kkt_residual": float(kkt)},
    )
    return (W.ravel() if squeeze else W), report


def _group_lasso_kkt(B, Y, W, beta, groups):
    G = B.T @ (B @ W - Y)
    worst = 0.0
    for g in groups:
        ng = np.linalg.norm(W[g])
        if ng > 0:
            worst = max(worst, np.linalg.norm(G[g] + beta * W[g] / ng))
        else:
            worst = max(worst, max(0.0, np.linalg.norm(G[g]) - beta))
    return worst


def l1_svm(B, y, beta, cfg: SolverConfig | None = None):
    """Minimize sum_i max(0, 1 - y_i (B w)_i) + beta*||w||_1.

    Three-operator consensus ADMM: one copy of w feeds the l1 prox, the
    product B w feeds the exact hinge prox; a margin-active least-squares
    polish sharpens the final iterate.

    Returns
    -------
    w : (k,) array
    report : SolveReport; extra carries the hinge multiplier estimate
        (``hinge_weights``) and the exact subgradient residual
        (``optimality_residual``).
    """
    cfg = cfg or SolverConfig()
    t0 = _ms()
    B = as_matrix(B, "B")
    n, k = B.shape
    y = _vec(y, n)
    if beta <= 0:
        raise InvalidInput("beta must be positive")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidInput("labels must be +1/-1")

    F = np.linalg.inv(np.eye(k) + B.T @ B)
    rho = cfg.rho
    w = np.zeros(k)
    z1 = np.zeros(k)
    z2 = np.zeros(n)
    u1 = np.zeros(k)
    u2 = np.zeros(n)
    it = 0
    r_pri = r_dua = np.inf
    eps_pri = eps_dua = 0.0
    for it in range(1, cfg.max_iters + 1):
        w = F @ ((z1 - u1) + B.T @ (z2 - u2))
        Bw = B @ w
        z1_old, z2_old = z1, z2
        z1 = soft_threshold(w + u1, beta / rho)
        z2 = _hinge_prox(Bw + u2, y, 1.0 / rho)
        u1 = u1 + w - z1
        u2 = u2 + Bw - z2
        r_pri = np.sqrt(np.linalg.norm(w - z1) ** 2 + np.linalg.norm(Bw - z2) ** 2)
        r_dua = rho * np.sqrt(
            np.linalg.norm(z1 - z1_old) ** 2 + np.linalg.norm(B.T @ (z2 - z2_old)) ** 2
        )
        eps_pri = np.sqrt(n + k) * cfg.abs_tol + cfg.rel_tol * max(
            np.linalg.norm(w) + np.linalg.norm(Bw), np.linalg.norm(z1) + np.linalg.norm(z2)
        )
        eps_dua = np.sqrt(k) * cfg.abs_tol + cfg.rel_tol * rho * (
            np.linalg.norm(u1) + np.linalg.norm(B.T @ u2)
        )
        if r_pri <= eps_pri and r_dua <= eps_dua:
            break
        rho_new, _ = _rho_update(rho, 0.0, r_pri, r_dua, it)
        if rho_new != rho:
            u1 = u1 * rho / rho_new
            u2 = u2 * rho / rho_new
            rho = rho_new

    w = _svm_polish(B, y, beta, z1)
    g, opt_res = _svm_multipliers(B, y, w, beta)
    obj = _svm_objective(B, y, w, beta)
    report = SolveReport(
        objective=float(obj),
        primal_residual=float(r_pri),
        dual_residual=float(r_dua),
        iterations=it,
        converged=bool(opt_res <= 1e-5 * max(1.0, beta)),
        wall_time_ms=_ms() - t0,
        extra={
            "hinge_weights": g,
            "optimality_residual": float(opt_res),
            "eps_primal": float(eps_pri),
            "eps_dual": float(eps_dua),
        },
    )
    return w, report


def _hinge_prox(t, y, lam):
    """Exact prox of lam * sum_i max(0, 1 - y_i t_i)."""
    m = y * t
    out = np.where(m > 1.0, t, np.where(m < 1.0 - lam, t + lam * y, y))
    return out


def _svm_objective(B, y, w, beta):
    return float(np.maximum(0.0, 1.0 - y * (B @ w)).sum() + beta * np.abs(w).sum())


def _svm_polish(B, y, beta, w):
    """Try the margin-active least-squares refit; keep whichever w is better."""
    w = w.copy()
    base = _svm_objective(B, y, w, beta)
    margins = y * (B @ w)
    act = np.where(np.abs(margins - 1.0) <= 1e-4 * max(1.0, np.abs(margins).max()))[0]
    supp = np.where(np.abs(w) > 1e-8 * max(1.0, np.abs(w).max()))[0]
    if act.size and supp.size:
        sub = B[np.ix_(act, supp)]
        ws, *_ = np.linalg.lstsq(sub, y[act], rcond=None)
        cand = np.zeros_like(w)
        cand[supp] = ws
        if _svm_objective(B, y, cand, beta) <= base:
            return cand
    return w


def _svm_multipliers(B, y, w, beta, iters=2000):
    """Hinge multipliers g in [0,1] minimizing the stationarity residual.

    Indices with violated margins get g = 1 and satisfied ones g = 0; only the
    active set is optimized (small projected-gradient solve). Returns (g, r)
    where r is the exact subgradient distance at the recovered multipliers.
    """
    n, k = B.shape
    margins = y * (B @ w)
    tol = 1e-7 * max(1.0, np.abs(margins).max())
    g = np.where(margins < 1.0 - tol, 1.0, 0.0)
    act = np.where(np.abs(margins - 1.0) <= tol)[0]
    supp = w != 0.0
    sgn = np.sign(w)

    def residual(gvec):
        grad_w = -B.T @ (y * gvec)
        r_on = np.abs(grad_w[supp] + beta * sgn[supp])
        r_off = np.maximum(np.abs(grad_w[~supp]) - beta, 0.0)
        return max(r_on.max() if r_on.size else 0.0, r_off.max() if r_off.size else 0.0)

    if act.size:
        # smooth surrogate: squared residual, projected gradient on [0,1]^act
        M = (B[act] * y[act, None]).T  # k x act
        base = -B.T @ (y * g) + M @ g[act]  # contribution with act zeroed

        def smooth_grad(ga):
            r = base - M @ ga
            r_on = r[supp] + beta * sgn[supp]
            r_off = np.sign(r[~supp]) * np.maximum(np.abs(r[~supp]) - beta, 0.0)
            full = np.zeros(k)
            full[supp] = r_on
            full[~supp] = r_off
            return -M.T @ full

        ga = g[act].copy()
        L = max(np.linalg.norm(M, 2) ** 2, 1e-12)
        for _ in range(iters):
            ga_new = np.clip(ga - smooth_grad(ga) / L, 0.0, 1.0)
            if np.linalg.norm(ga_new - ga) <= 1e-14:
                ga = ga_new
                break
            ga = ga_new
        g[act] = ga
    return g, residual(g)


# ---------------------------------------------------------------------------
# simplex-constrained least squares
# ---------------------------------------------------------------------------


def simplex_ls(G, target, cfg: SolverConfig | None = None):
    """Minimize ||G lam - target||_2 over the probability simplex.

    The certificate is the Frank-Wolfe gap of the quadratic, reported in
    ``extra['fw_gap']``; the returned objective is the Euclidean distance.
    """
    cfg = cfg or SolverConfig()
    t0 = _ms()
    G = as_matrix(G, "G")
    d, m = G.shape
    target = _vec(target, d, "target")

    L = max(np.linalg.norm(G, 2) ** 2, 1e-30)
    lam = np.full(m, 1.0 / m)
    lam_y = lam.copy()
    tk = 1.0
    it = 0
    gap = np.inf
    scale = max(1.0, float(target @ target))
    for it in range(1, cfg.max_iters + 1):
        grad = G.T @ (G @ lam_y - target)
        lam_new = project_simplex(lam_y - grad / L)
        if (lam_y - lam_new) @ (lam_new - lam) > 0:
            tk = 1.0
            lam_y = lam_new
        else:
            tk_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            lam_y = lam_new + ((tk - 1.0) / tk_new) * (lam_new - lam)
            tk = tk_new
        lam = lam_new
        if it % 25 == 0 or it == cfg.max_iters:
            grad = G.T @ (G @ lam - target)
            gap = float(lam @ grad - grad.min())
            if gap <= max(cfg.abs_tol, cfg.rel_tol * scale) * 0.5:
                break

    lam = _simplex_polish(G, target, lam)
    grad = G.T @ (G @ lam - target)
    gap = min(gap, float(lam @ grad - grad.min()))

    dist = float(np.linalg.norm(G @ lam - target))
    report = SolveReport(
        objective=dist,
        primal_residual=float(abs(lam.sum() - 1.0)),
        dual_residual=0.0,
        iterations=it,
        converged=bool(gap <= max(cfg.abs_tol, cfg.rel_tol * scale)),
        wall_time_ms=_ms() - t0,
        extra={"fw_gap": float(gap)},
    )
    return lam, report


def _simplex_polish(G, target, lam, sweeps: int = 30):
    """Exact refit on the active vertices of a simplex least-squares solution.

    Solves the equality-constrained normal equations on the current support,
    dropping negative coordinates until the refit stays feasible; accepts the
    result only when it does not increase the objective.
    """
    best = lam
    best_val = np.linalg.norm(G @ lam - target)
    support = np.where(lam > 1e-10)[0]
    for _ in range(sweeps):
        if support.size == 0:
            break
        Gs = G[:, support]
        k = support.size
        KKT = np.zeros((k + 1, k + 1))
        KKT[:k, :k] = Gs.T @ Gs
        KKT[:k, k] = 1.0
        KKT[k, :k] = 1.0
        rhs = np.concatenate([Gs.T @ target, [1.0]])
        try:
            sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        cand = sol[:k]
        if cand.min() >= -1e-12:
            full = np.zeros(lam.size)
            full[support] = np.maximum(cand, 0.0)
            s = full.sum()
            if s > 0:
                full /= s
            val = np.linalg.norm(G @ full - target)
            if val <= best_val + 1e-12:
                best, best_val = full, val
            break
        support = support[cand > 1e-12]
    return best


# ---------------------------------------------------------------------------
# linear objective over the cone-constrained unit ball
# ---------------------------------------------------------------------------


def cone_ball_lp(A, v, sense: str = "max", cfg: SolverConfig | None = None):
    """Optimize v^T A u over {u : A u >= 0, ||u||_2 <= 1}.

    ADMM splits the ball-constrained quadratic (solved exactly through a
    cached eigendecomposition of A^T A) from the orthant projection, then a
    greedy active-row polish rebuilds the solution from the tight constraints
    to near machine precision.

    Parameters
    ----------
    A : (n, d) array
    v : (n,) array; the linear objective is v^T A u
    sense : "max" or "min"

    Returns
    -------
    u : (d,) array, feasible within the documented tolerances
    value : float, v^T A u at the returned point
    report : SolveReport
    """
    cfg = cfg or SolverConfig()
    t0 = _ms()
    A = as_matrix(A, "A")
    n, d = A.shape
    v = _vec(v, n, "v")
    if sense not in ("max", "min"):
        raise InvalidInput("sense must be 'max' or 'min'")
    sign = 1.0 if sense == "max" else -1.0
    c = A.T @ (sign * v)

    evals, Q = np.linalg.eigh(A.T @ A)
    evals = np.maximum(evals, 0.0)
    scale = max(1.0, np.abs(A).max())

    rho = cfg.rho
    u_vec = np.zeros(d)
    z = np.zeros(n)
    mu = np.zeros(n)
    it = 0
    r_pri = r_dua = np.inf
    eps_pri = eps_dua = 0.0
    for it in range(1, cfg.max_iters + 1):
        rhs = c + rho * (A.T @ (z - mu))
        u_vec = _ball_qp(evals, Q, rho, rhs)
        Au = A @ u_vec
        z_old = z
        z = np.maximum(Au + mu, 0.0)
        mu = mu + Au - z
        r_pri = np.linalg.norm(Au - z)
        r_dua = rho * np.linalg.norm(A.T @ (z - z_old))
        eps_pri = np.sqrt(n) * cfg.abs_tol + cfg.rel_tol * max(
            np.linalg.norm(Au), np.linalg.norm(z)
        )
        eps_dua = np.sqrt(d) * cfg.abs_tol + cfg.rel_tol * rho * np.linalg.norm(A.T @ mu)
        if r_pri <= eps_pri and r_dua <= eps_dua:
            break
        rho, mu = _rho_update(rho, mu, r_pri, r_dua, it)

    nu = np.linalg.norm(u_vec)
    if nu > 1.0:
        u_vec = u_vec / nu
    best_u, best_val = _cone_polish(A, c, u_vec, scale)
    value = sign * best_val
    report = SolveReport(
        objective=float(value),
        primal_residual=float(max(r_pri, -min(0.0, (A @ best_u).min()))),
        dual_residual=float(r_dua),
        iterations=it,
        converged=bool(r_pri <= eps_pri and r_dua <= eps_dua),
        wall_time_ms=_ms() - t0,
        extra={"eps_primal": float(eps_pri), "eps_dual": float(eps_dua)},
    )
    return best_u, float(value), report


def _ball_qp(evals, Q, rho, rhs):
    """argmin (rho/2) u^T A^T A u - rhs^T u over the unit ball.

    A^T A = Q diag(evals) Q^T is precomputed by the caller; the multiplier for
    the ball constraint is found by bisection on the monotone norm profile.
    """
    b = Q.T @ rhs
    h = rho * evals
    with np.errstate(divide="ignore", invalid="ignore"):
        w0 = np.where(h > 0.0, b / np.where(h > 0.0, h, 1.0), np.inf)
        w0 = np.where(np.abs(b) < 1e-300, 0.0, w0)
    n0 = np.linalg.norm(w0) if np.all(np.isfinite(w0)) else np.inf
    if n0 <= 1.0:
        return Q @ w0

    def norm_at(nu):
        return np.linalg.norm(b / (h + nu))

    hi = max(1.0, float(h.max()) if h.size else 1.0)
    for _ in range(200):
        if norm_at(hi) <= 1.0:
            break
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if norm_at(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return Q @ (b / (h + hi))


def _cone_polish(A, c, u_admm, scale):
    """Greedy active-set refinement of max c^T u over the cone-ball set."""
    candidates = [np.zeros(A.shape[1])]
    if np.all(A @ u_admm >= -1e-8 * scale):
        candidates.append(u_admm)
    tight = set(np.where(A @ u_admm <= 1e-6 * scale)[0])
    for start in (tight, set()):
        u = _active_set_opt(A, c, set(start), scale)
        if u is not None:
            candidates.append(u)
    best_u, best_val = None, -np.inf
    for u in candidates:
        val = c @ u
        if val > best_val:
            best_u, best_val = u, val
    return best_u, best_val


def _active_set_opt(A, c, active, scale):
    n = A.shape[0]
    for _ in range(n + 1):
        if active:
            f = svd(A[sorted(active)])
            proj = c - f.V_right @ (f.V_right.T @ c)
        else:
            proj = c.copy()
        norm = np.linalg.norm(proj)
        if norm <= 1e-13 * max(1.0, np.linalg.norm(c)):
            return np.zeros(A.shape[1])
        u = proj / norm
        viol = np.where(A @ u < -1e-10 * scale)[0]
        if viol.size == 0:
            return u
        active |= set(viol.tolist())
    return None


# ---------------------------------------------------------------------------
# spike-free convex training program
# ---------------------------------------------------------------------------


def spikefree_convex_train(A, y, beta, loss: str = "squared",
                           cfg: SolverConfig | None = None, _equality: bool = False):
    """Solve min loss(A(w1 - w2), y) + beta*(||w1|| + ||w2||), A w1 >= 0, A w2 >= 0.

    The exact convex training program for spike-free data. ADMM stacks five
    blocks (two norm proxes, two cone projections, one loss prox) against a
    single cached normal-equation factor.

    Parameters
    ----------
    A : (n, d) array
    y : (n,) targets (labels in +1/-1 for the hinge loss)
    beta : nonnegative penalty
    loss : "squared" or "hinge"
    cfg : SolverConfig, optional

    Returns
    -------
    w1, w2 : (d,) arrays with A w1 >= 0, A w2 >= 0 within 1e-8 scale
    report : SolveReport
    """
    cfg = cfg or SolverConfig()
    t0 = _ms()
    A = as_matrix(A, "A")
    n, d = A.shape
    y = _vec(y, n)
    if beta < 0:
        raise InvalidInput("beta must be nonnegative")
    if loss not in ("squared", "hinge"):
        raise InvalidInput("loss must be 'squared' or 'hinge'")
    if _equality:
        _check_feasible(A, y)  # need y reachable by A(w1 - w2)

    G = A.T @ A
    H = np.block([[np.eye(d) + 2.0 * G, -G], [-G, np.eye(d) + 2.0 * G]])
    Hinv = np.linalg.inv(H)

    def apply_Mt(z1, z2, c1, c2, t):
        top = z1 + A.T @ (c1 + t)
        bot = z2 + A.T @ (c2 - t)
        return np.concatenate([top, bot])

    rho = cfg.rho
    w1 = np.zeros(d)
    w2 = np.zeros(d)
    z1 = np.zeros(d)
    z2 = np.zeros(d)
    c1 = np.zeros(n)
    c2 = np.zeros(n)
    t = np.zeros(n)
    uz1 = np.zeros(d)
    uz2 = np.zeros(d)
    uc1 = np.zeros(n)
    uc2 = np.zeros(n)
    ut = np.zeros(n)
    it = 0
    r_pri = r_dua = np.inf
    eps_pri = eps_dua = 0.0
    for it in range(1, cfg.max_iters + 1):
        x = Hinv @ apply_Mt(z1 - uz1, z2 - uz2, c1 - uc1, c2 - uc2, t - ut)
        w1, w2 = x[:d], x[d:]
        Aw1, Aw2 = A @ w1, A @ w2
        diff = Aw1 - Aw2
        olds = (z1, z2, c1, c2, t)
        if beta > 0:
            z1 = _l2_shrink(w1 + uz1, beta / rho)
            z2 = _l2_shrink(w2 + uz2, beta / rho)
        else:
            z1, z2 = w1 + uz1, w2 + uz2
        c1 = np.maximum(Aw1 + uc1, 0.0)
        c2 = np.maximum(Aw2 + uc2, 0.0)
        if _equality:
            t = y.copy()
        elif loss == "squared":
            t = (rho * (diff + ut) + y) / (rho + 1.0)
        else:
            t = _hinge_prox(diff + ut, y, 1.0 / rho)
        uz1 = uz1 + w1 - z1
        uz2 = uz2 + w2 - z2
        uc1 = uc1 + Aw1 - c1
        uc2 = uc2 + Aw2 - c2
        ut = ut + diff - t
        r_pri = np.sqrt(
            np.linalg.norm(w1 - z1) ** 2
            + np.linalg.norm(w2 - z2) ** 2
            + np.linalg.norm(Aw1 - c1) ** 2
            + np.linalg.norm(Aw2 - c2) ** 2
            + np.linalg.norm(diff - t) ** 2
        )
        r_dua = rho * np.sqrt(
            np.linalg.norm(z1 - olds[0]) ** 2
            + np.linalg.norm(z2 - olds[1]) ** 2
            + np.linalg.norm(A.T @ (c1 - olds[2])) ** 2
            + np.linalg.norm(A.T @ (c2 - olds[3])) ** 2
            + np.linalg.norm(A.T @ (t - olds[4])) ** 2
        )
        prim_scale = max(
            np.linalg.norm(np.concatenate([w1, w2, Aw1, Aw2, diff])),
            np.linalg.norm(np.concatenate([z1, z2, c1, c2, t])),
        )
        eps_pri = np.sqrt(2 * d + 3 * n) * cfg.abs_tol + cfg.rel_tol * prim_scale
        eps_dua = np.sqrt(2 * d) * cfg.abs_tol + cfg.rel_tol * rho * np.linalg.norm(
            apply_Mt(uz1, uz2, uc1, uc2, ut)
        )
        if r_pri <= eps_pri and r_dua <= eps_dua:
            break
        rho_new, _ = _rho_update(rho, 0.0, r_pri, r_dua, it)
        if rho_new != rho:
            f = rho / rho_new
            uz1, uz2, uc1, uc2, ut = uz1 * f, uz2 * f, uc1 * f, uc2 * f, ut * f
            rho = rho_new

    w1, w2 = _spikefree_project(w1, w2, z1, z2)
    obj = _spikefree_objective(A, y, w1, w2, beta, loss, _equality)
    report = SolveReport(
        objective=float(obj),
        primal_residual=float(r_pri),
        dual_residual=float(r_dua),
        iterations=it,
        converged=bool(r_pri <= eps_pri and r_dua <= eps_dua),
        wall_time_ms=_ms() - t0,
        extra={"eps_primal": float(eps_pri), "eps_dual": float(eps_dua)},
    )
    return w1, w2, report


def spikefree_min_norm(A, y, cfg: SolverConfig | None = None):
    """min ||w1|| + ||w2|| s.t. A(w1 - w2) = y, A w1 >= 0, A w2 >= 0."""
    return spikefree_convex_train(A, y, beta=1.0, loss="squared", cfg=cfg, _equality=True)


def _l2_shrink(x, kappa):
    nx = np.linalg.norm(x)
    if nx <= kappa:
        return np.zeros_like(x)
    return (1.0 - kappa / nx) * x


def _spikefree_project(w1, w2, z1, z2):
    """Zero blocks whose shrinkage copy vanished, so kill cases come back exact."""
    if not np.any(z1) and np.linalg.norm(w1) <= 1e-6:
        w1 = np.zeros_like(w1)
    if not np.any(z2) and np.linalg.norm(w2) <= 1e-6:
        w2 = np.zeros_like(w2)
    return w1, w2


def _spikefree_objective(A, y, w1, w2, beta, loss, equality):
    pred = A @ (w1 - w2)
    norms = np.linalg.norm(w1) + np.linalg.norm(w2)
    if equality:
        return norms
    if loss == "squared":
        return 0.5 * np.sum((pred - y) ** 2) + beta * norms
    return np.maximum(0.0, 1.0 - y * pred).sum() + beta * norms
