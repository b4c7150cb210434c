"""Rectified-ellipsoid geometry: spike-free certification, polar sampling,
extreme points, and hull vertex tests.

The nonconvex inner maximizations (spike-free ratio, polar support) are
NP-hard in general, so the numeric paths only ever return a *negative*
certificate (a verified violating direction) or "inconclusive"; the analytic
fast paths cover the matrix families with proofs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateExtreme, InvalidInput, PatternInfeasible
from .linalg import as_matrix, pseudo_inverse, relu, svd
from .solvers import SolverConfig, cone_ball_lp, simplex_ls

PROVENANCES = (
    "basis-direction",
    "general-direction",
    "one-dim",
    "rank-one",
    "closed-form",
    "cutting-plane",
)

BOUNDARY_TOL = 1e-8


@dataclass
class Neuron:
    """A hidden unit: direction u, optional bias b, and where it came from."""

    u: np.ndarray
    b: float | None = None
    provenance: str = "general-direction"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).ravel()
        if self.provenance not in PROVENANCES:
            raise InvalidInput(f"unknown provenance {self.provenance!r}")
        nu = np.linalg.norm(self.u)
        if self.provenance != "closed-form" and abs(nu - 1.0) > 1e-8:
            raise InvalidInput(f"neuron direction must be unit norm (got {nu})")

    def activations(self, A) -> np.ndarray:
        z = np.asarray(A, dtype=float) @ self.u
        if self.b is not None:
            z = z + self.b
        return relu(z)


@dataclass
class SpikeFreeVerdict:
    status: str  # certified-spike-free | certified-not-spike-free | inconclusive
    witness_u: np.ndarray | None
    max_ratio: float
    method: str  # analytic-whitened | analytic-rank-one | analytic-diagonal | numeric-search


def activation_pattern(A, u, b=None, tol: float = BOUNDARY_TOL):
    """Boolean mask of active samples; boundary hits (|z| <= tol) count active."""
    z = np.asarray(A, dtype=float) @ np.asarray(u, dtype=float)
    if b is not None:
        z = z + b
    return z >= -tol


def pattern_matches(A, u, b, S, tol: float = BOUNDARY_TOL) -> bool:
    """True when actives are >= -tol and inactives <= +tol (boundary is free)."""
    z = np.asarray(A, dtype=float) @ np.asarray(u, dtype=float)
    if b is not None:
        z = z + b
    S = np.asarray(sorted(S), dtype=int)
    mask = np.zeros(z.size, dtype=bool)
    mask[S] = True
    return bool(np.all(z[mask] >= -tol) and np.all(z[~mask] <= tol))


def _restart_directions(d, restarts, seed):
    """Deterministic unit directions; each row depends only on (seed, index)."""
    U = np.empty((restarts, d))
    for r in range(restarts):
        g = np.random.default_rng((seed, r)).standard_normal(d)
        U[r] = g / max(np.linalg.norm(g), 1e-30)
    return U


# ---------------------------------------------------------------------------
# spike-free certification
# ---------------------------------------------------------------------------


def _diagonal_gram_sigmas(A, tol_scale=1e-8):
    """Row norms when AA^T is diagonal (the Sigma V^T family); None otherwise."""
    G = A @ A.T
    off = G - np.diag(np.diag(G))
    scale = max(1.0, np.abs(G).max())
    if off.size and np.abs(off).max() > tol_scale * scale:
        return None
    sig = np.sqrt(np.maximum(np.diag(G), 0.0))
    if np.sum(sig > 1e-12 * max(1.0, sig.max())) > A.shape[1]:
        return None
    return sig


def _rank_one_factors(A):
    """(c, a) with A = c a^T when A is numerically rank one; None otherwise."""
    f = svd(A)
    if f.r != 1:
        return None
    c = f.U_left[:, 0] * f.singular_values[0]
    a = f.V_right[:, 0]
    if c.sum() < 0:  # fix the sign ambiguity toward nonnegative c when possible
        c, a = -c, -a
    return c, a


def spike_free_check(A, cfg: SolverConfig | None = None, restarts: int = 200,
                     seed: int = 0, ascent_steps: int = 5) -> SpikeFreeVerdict:
    """Certify whether the rectified ellipsoid of A is a linearly-described set.

    Analytic certificates cover whitened rows, nonnegative rank-one data, and
    diagonal-Gram (Sigma V^T) matrices. Everything else samples ``restarts``
    directions and refines each by a short projected gradient ascent on
    ||pinv(A) (A u)_+||; ratios above 1 + 1e-6 give a verified negative
    certificate, otherwise the verdict is inconclusive.

    The refinement budget is deliberately small: violations with any real
    margin have wide basins and are found from the samples, while a long
    ascent would also surface hairline ratios of order 1 + sqrt(n/d) that
    wide random data always has and that leave the convex relaxation
    essentially exact. Raise ``ascent_steps`` to hunt for those too.
    """
    A = as_matrix(A)
    n, d = A.shape

    G = A @ A.T
    if np.linalg.norm(G - np.eye(n)) <= 1e-6 and n <= d:
        return SpikeFreeVerdict("certified-spike-free", None, 1.0, "analytic-whitened")

    ro = _rank_one_factors(A)
    if ro is not None:
        c, _ = ro
        if np.all(c >= -1e-12 * max(1.0, np.abs(c).max())):
            return SpikeFreeVerdict("certified-spike-free", None, 1.0, "analytic-rank-one")
        # mixed-sign rank-one: not spike-free, but only through the row-space
        # condition, which the ratio criterion cannot witness; the exact peak
        # ratio max(||(c)_+||, ||(-c)_+||)^2 / ||c||^2 stays below one
        peak = max(np.sum(relu(c) ** 2), np.sum(relu(-c) ** 2)) / (c @ c)
        return SpikeFreeVerdict("inconclusive", None, float(peak), "analytic-rank-one")

    sig = _diagonal_gram_sigmas(A)
    if sig is not None:
        return SpikeFreeVerdict("certified-spike-free", None, 1.0, "analytic-diagonal")

    # ||pinv(A) q|| <= 1 is necessary for q to be the image of a ball point at
    # any rank, so a ratio witness is a valid negative certificate even when
    # the rows are dependent.  (Rank-deficient matrices can also fail through
    # the column-space condition (I - A pinv(A))(A u)_+ = 0, but that failure
    # mode has no ratio witness and therefore stays inconclusive here.)
    P = pseudo_inverse(A)
    ratio, u_best = _ratio_search(A, P, restarts, seed, iters=ascent_steps)
    if ratio > 1.0 + 1e-6:
        # verify by direct evaluation before claiming the certificate
        check = np.linalg.norm(P @ relu(A @ u_best))
        if check > 1.0 + 1e-6:
            return SpikeFreeVerdict("certified-not-spike-free", u_best, float(check),
                                    "numeric-search")
    return SpikeFreeVerdict("inconclusive", None, float(ratio), "numeric-search")


def _ratio_search(A, P, restarts, seed, iters: int = 5):
    """Sampled directions refined by projected gradient ascent on
    ||P (A u)_+||^2; tracks the best direction ever visited."""
    n, d = A.shape
    U = _restart_directions(d, restarts, seed)
    PtP = P.T @ P  # n x n
    L = max(2.0 * np.linalg.norm(A, 2) ** 2 * np.linalg.norm(P, 2) ** 2, 1e-12)
    step = 1.0 / L

    def score(U):
        return np.linalg.norm(relu(U @ A.T) @ P.T, axis=1)

    vals = score(U)
    i = int(np.argmax(vals))
    best_val, best_u = float(vals[i]), U[i].copy()
    for _ in range(iters):
        Z = U @ A.T
        Rz = relu(Z)
        grad = 2.0 * ((Z > 0) * (Rz @ PtP)) @ A
        U = U + step * grad
        U /= np.maximum(np.linalg.norm(U, axis=1, keepdims=True), 1e-30)
        vals = score(U)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_u = float(vals[i]), U[i].copy()
    return best_val, best_u


# ---------------------------------------------------------------------------
# support function of the rectified ellipsoid (and polar sampling)
# ---------------------------------------------------------------------------


def rectified_support(A, g, restarts: int = 50, seed: int = 0):
    """max_{||u|| <= 1} g^T (A u)_+ and its maximizer.

    Exact for d = 1, rank-one, and diagonal-Gram matrices; elsewhere a
    monotone activation-pattern iteration from deterministic restarts plus a
    cone-relaxation candidate.
    """
    A = as_matrix(A)
    n, d = A.shape
    g = np.asarray(g, dtype=float).ravel()

    if d == 1:
        a = A[:, 0]
        vals = [(float(g @ relu(s * a)), np.array([s])) for s in (1.0, -1.0)]
        vals.append((0.0, np.array([1.0])))
        return max(vals, key=lambda t: t[0])

    ro = _rank_one_factors(A)
    if ro is not None:
        c, a = ro
        na = np.linalg.norm(a)
        cands = [(float(na * g @ relu(s * c)), s * a / na) for s in (1.0, -1.0)]
        cands.append((0.0, a / na))
        return max(cands, key=lambda t: t[0])

    sig = _diagonal_gram_sigmas(A)
    if sig is not None:
        w = relu(sig * g)
        val = float(np.linalg.norm(w))
        if val <= 1e-30:
            return 0.0, np.zeros(d)
        # realize the maximizer through the row space
        t = w / val
        u, *_ = np.linalg.lstsq(A, sig * t, rcond=None)
        nu = np.linalg.norm(u)
        if nu > 0:
            u = u / max(nu, 1.0)
        return val, u

    best_val, best_u = _support_ascent(A, g, restarts, seed)
    u_cone, val_cone, _ = cone_ball_lp(A, g, "max")
    if val_cone > best_val:
        # the cone point is feasible for the original problem only if Au >= 0,
        # which cone_ball_lp guarantees, so g^T(Au)_+ = val there
        best_val, best_u = float(val_cone), u_cone
    return best_val, best_u


def _support_ascent(A, g, restarts, seed, iters: int = 80):
    """Projected subgradient ascent for max g^T (A u)_+ over the unit ball.

    Steps are only accepted when they improve, so every restart ends at least
    as high as its starting sample.
    """
    n, d = A.shape
    U = _restart_directions(d, restarts, seed)

    def score(U):
        return np.sum(relu(U @ A.T) * g, axis=1)

    vals = score(U)
    eta = np.full(restarts, 1.0 / max(np.linalg.norm(A, 2), 1e-30))
    for _ in range(iters):
        grad = (((U @ A.T) > 0) * g) @ A
        cand = U + eta[:, None] * grad
        cand /= np.maximum(np.linalg.norm(cand, axis=1, keepdims=True), 1e-30)
        cvals = score(cand)
        up = cvals > vals
        U[up] = cand[up]
        vals[up] = cvals[up]
        eta[up] *= 1.2
        eta[~up] *= 0.5
    i = int(np.argmax(vals))
    if vals[i] < 0.0:
        return 0.0, np.zeros(d)
    return float(vals[i]), U[i]


def sample_rectified_ellipsoid(A, count: int, seed: int = 0):
    """Images (A u)_+ of uniformly sampled unit vectors; rows are points."""
    A = as_matrix(A)
    U = _restart_directions(A.shape[1], count, seed)
    return relu(U @ A.T)


def sample_polar(A, count: int, seed: int = 0, restarts: int = 50):
    """Boundary points g / s(g) of the polar set, one per sampled direction.

    Directions whose support value s(g) <= 1e-12 are skipped (the polar is
    unbounded there).
    """
    A = as_matrix(A)
    n = A.shape[0]
    pts = []
    for r in range(count):
        g = np.random.default_rng((seed, 7919, r)).standard_normal(n)
        g /= max(np.linalg.norm(g), 1e-30)
        s, _ = rectified_support(A, g, restarts=restarts, seed=seed + 13 * r)
        if s <= 1e-12:
            continue
        pts.append(g / s)
    return np.array(pts) if pts else np.zeros((0, n))


# ---------------------------------------------------------------------------
# extreme points
# ---------------------------------------------------------------------------


def extreme_point_basis(A, i: int, cfg: SolverConfig | None = None) -> Neuron:
    """Extreme neuron separating sample i from the hull of the others.

    u is the normalized residual of the best simplex approximation of a_i by
    the other samples; b makes the strongest competitor exactly inactive.
    """
    A = as_matrix(A)
    n, d = A.shape
    if not 0 <= i < n:
        raise InvalidInput("sample index out of range")
    if n < 2:
        raise InvalidInput("need at least two samples")
    others = np.delete(np.arange(n), i)
    lam, rep = simplex_ls(A[others].T, A[i], cfg)
    resid = A[i] - A[others].T @ lam
    nr = np.linalg.norm(resid)
    if nr <= 1e-8:
        raise DegenerateExtreme(f"sample {i} lies in the hull of the others")
    u = resid / nr
    b = float(np.min(-A[others] @ u))
    margin = float(A[i] @ u + b)
    worst = float(np.max(A[others] @ u + b))
    if margin <= 0.0 or worst > 1e-8:
        raise DegenerateExtreme(
            f"separation of sample {i} failed (margin {margin}, competitor {worst})")
    return Neuron(u=u, b=b, provenance="basis-direction",
                  meta={"sample_index": int(i), "residual": float(nr),
                        "margin": margin})


def extreme_point_direction(A, alpha, S, cfg: SolverConfig | None = None) -> Neuron:
    """Extreme neuron maximizing alpha^T (A u + b 1)_+ with active set S.

    For each candidate anchor sample k the bias substitution b = -a_k^T u
    turns the pattern constraints into a cone over shifted rows, leaving a
    linear objective over a cone-ball set; the best anchor wins. When the
    active multipliers sum to zero every bias in an interval is optimal: the
    lower endpoint is returned and the interval recorded in ``meta``.
    """
    A = as_matrix(A)
    n, d = A.shape
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size != n:
        raise InvalidInput("alpha must have one entry per sample")
    S = sorted(int(i) for i in S)
    if any(i < 0 or i >= n for i in S):
        raise InvalidInput("active set indices out of range")
    Sc = [j for j in range(n) if j not in S]
    mask = np.zeros(n, dtype=bool)
    mask[S] = True

    if not S:
        u = _inactive_direction(A)
        b = float(np.min(-A @ u)) - 1e-6 * max(1.0, np.abs(A).max())
        return Neuron(u=u, b=b, provenance="general-direction",
                      meta={"active_set": [], "objective": 0.0})

    ssum = float(alpha[mask].sum())
    anchors = Sc if (ssum > 1e-12 and Sc) else S

    best = None
    for k in anchors:
        D = np.vstack([A[i] - A[k] for i in S] + [A[k] - A[j] for j in Sc])
        vtil = np.concatenate([alpha[S], np.zeros(len(Sc))])
        c = D.T @ vtil
        u_k, val, _ = cone_ball_lp(D, vtil, "max", cfg)
        gap = _cone_gap(D, c, u_k, val)
        if best is None or val > best[0]:
            best = (float(val), u_k, k, gap)
    if best is None:
        raise PatternInfeasible("no anchor admits the requested pattern")

    val, u, k, gap = best
    if np.linalg.norm(u) < 1e-12:
        raise PatternInfeasible("requested pattern only realizable by u = 0")
    u = u / np.linalg.norm(u)
    lo = float(np.max(-A[S] @ u))
    hi = float(np.min(-A[Sc] @ u)) if Sc else np.inf
    if ssum > 1e-12 and Sc:
        b = hi
    elif ssum < -1e-12:
        b = lo
    else:
        b = lo  # whole interval [lo, hi] optimal; take the lower endpoint
    if not pattern_matches(A, u, b, S, tol=1e-7):
        raise PatternInfeasible("solved neuron does not realize the pattern")
    meta = {
        "active_set": S,
        "anchor": int(k),
        "objective": float(alpha @ relu(A @ u + b)),
        "inner_gap": float(gap),
        "bias_interval": [lo, hi if np.isfinite(hi) else None],
        "multiplier_sum": ssum,
    }
    return Neuron(u=u, b=float(b), provenance="general-direction", meta=meta)


def _inactive_direction(A):
    """A unit direction along which all samples can be made inactive."""
    mean = A.mean(axis=0)
    if np.linalg.norm(mean) > 1e-12:
        return -mean / np.linalg.norm(mean)
    u = np.zeros(A.shape[1])
    u[0] = 1.0
    return u


def _cone_gap(D, c, u, val):
    """Weak-duality bound for max c^T u over {D u >= 0, ||u|| <= 1}.

    For any mu >= 0 the value is at most ||c + D^T mu||, with equality at the
    optimum when mu is supported on the tight rows; the clipped least-squares
    multiplier gives an honest (possibly loose) gap certificate.
    """
    scale = max(1.0, np.abs(D).max())
    act = np.where(D @ u <= 1e-8 * scale)[0]
    if act.size:
        mu, *_ = np.linalg.lstsq(D[act].T, -(c - _null_project(D[act], c)), rcond=None)
        mu = np.maximum(mu, 0.0)
        bound = float(np.linalg.norm(c + D[act].T @ mu))
    else:
        bound = float(np.linalg.norm(c))
    return max(bound - float(val), 0.0)


def _null_project(D, c):
    """Project c onto the null space of D's rows."""
    f = svd(D)
    return c - f.V_right @ (f.V_right.T @ c)


def enumerate_extremes_1d(a) -> list[Neuron]:
    """All extreme neurons of a 1-D dataset: u = +/-1 with b = -u * a_i."""
    a = np.asarray(a, dtype=float).ravel()
    out = []
    seen = set()
    for ai in a:
        if ai in seen:
            continue
        seen.add(ai)
        for s in (1.0, -1.0):
            out.append(Neuron(u=np.array([s]), b=float(-s * ai), provenance="one-dim",
                              meta={"sample_value": float(ai)}))
    return out


def enumerate_extremes_rankone(c, a) -> list[Neuron]:
    """Extreme neurons of rank-one data A = c a^T: collinear with a."""
    c = np.asarray(c, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    na = np.linalg.norm(a)
    if na <= 0.0:
        raise InvalidInput("a must be nonzero")
    out = []
    seen = set()
    for ci in c:
        if ci in seen:
            continue
        seen.add(ci)
        for s in (1.0, -1.0):
            out.append(Neuron(u=s * a / na, b=float(-s * ci * na), provenance="rank-one",
                              meta={"sample_value": float(ci)}))
    return out


def hull_distance(A, i: int, cfg: SolverConfig | None = None) -> float:
    """Distance from sample i to the convex hull of the other samples."""
    A = as_matrix(A)
    n = A.shape[0]
    if n < 2:
        raise InvalidInput("need at least two samples")
    others = np.delete(np.arange(n), i)
    _, rep = simplex_ls(A[others].T, A[i], cfg)
    return float(rep.objective)


# ---------------------------------------------------------------------------
# maximum constraint correlation (certificate verification engine)
# ---------------------------------------------------------------------------


def max_correlation(A, v, use_bias: bool = False, restarts: int = 200, seed: int = 0):
    """sup over the neuron set of |v^T (A u + b 1)_+| and an argmax neuron.

    Dispatches to exact enumerations/analytic forms for 1-D, rank-one, and
    diagonal-Gram data; otherwise a restart search (plus cone candidates).
    With a bias the value is finite only against zero-sum v, which is the only
    way the training duals use it.
    """
    A = as_matrix(A)
    n, d = A.shape
    v = np.asarray(v, dtype=float).ravel()

    if use_bias:
        cands = _bias_candidates(A, v, restarts, seed)
        best, arg = 0.0, None
        for u, b in cands:
            val = abs(float(v @ relu(A @ u + b)))
            if val > best:
                best, arg = val, (u, b)
        if arg is None:
            u0 = np.zeros(d)
            u0[0] = 1.0
            return 0.0, Neuron(u=u0, b=0.0, provenance="cutting-plane")
        return best, Neuron(u=arg[0], b=float(arg[1]), provenance="cutting-plane")

    if d == 1 or _rank_one_factors(A) is not None or _diagonal_gram_sigmas(A) is not None:
        v1, u1 = rectified_support(A, v, restarts=restarts, seed=seed)
        v2, u2 = rectified_support(A, -v, restarts=restarts, seed=seed)
    else:
        v1, u1 = _numeric_support(A, v, restarts, seed)
        v2, u2 = _numeric_support(A, -v, restarts, seed)
    if v1 >= v2:
        return float(v1), Neuron(u=_safe_unit(u1), provenance="cutting-plane")
    return float(v2), Neuron(u=_safe_unit(u2), provenance="cutting-plane")


def _safe_unit(u):
    nu = np.linalg.norm(u)
    if nu <= 1e-30:
        u = np.zeros_like(u)
        u[0] = 1.0
        return u
    return u / nu


def _numeric_support(A, g, restarts, seed):
    val, u = _support_ascent(A, g, restarts, seed)
    u_cone, val_cone, _ = cone_ball_lp(A, g, "max")
    if val_cone > val:
        val, u = float(val_cone), u_cone
    return val, u


def _bias_candidates(A, v, restarts, seed):
    """Candidate (u, b) pairs for the biased correlation search."""
    n, d = A.shape
    cands = []
    if d == 1:
        for nrn in enumerate_extremes_1d(A[:, 0]):
            cands.append((nrn.u, nrn.b))
        return cands
    ro = _rank_one_factors(A)
    if ro is not None:
        for nrn in enumerate_extremes_rankone(ro[0], ro[1]):
            cands.append((nrn.u, nrn.b))
        return cands
    for sgn in (1.0, -1.0):
        g = sgn * v
        U = _restart_directions(d, restarts, seed)
        b = _best_breakpoint_bias(A, U, g)
        vals = np.sum(relu(U @ A.T + b[:, None]) * g, axis=1)
        eta = np.full(U.shape[0], 1.0 / max(np.linalg.norm(A, 2), 1e-30))
        for t in range(60):
            grad = (((U @ A.T + b[:, None]) > 0) * g) @ A
            Uc = U + eta[:, None] * grad
            Uc /= np.maximum(np.linalg.norm(Uc, axis=1, keepdims=True), 1e-30)
            bc = _best_breakpoint_bias(A, Uc, g)  # exact in b given u
            cvals = np.sum(relu(Uc @ A.T + bc[:, None]) * g, axis=1)
            up = cvals > vals
            U[up], b[up], vals[up] = Uc[up], bc[up], cvals[up]
            eta[up] *= 1.2
            eta[~up] *= 0.5
        r = int(np.argmax(vals))
        cands.append((U[r], b[r]))
    return cands


def _best_breakpoint_bias(A, U, g):
    """Per restart, the breakpoint bias b = -a_i^T u maximizing g^T(Au+b)_+.

    The objective is piecewise linear in b with breakpoints exactly there, so
    scanning them is an exact coordinate maximization.
    """
    Z = U @ A.T  # r x n
    B = -Z
    vals = np.einsum("n,rmn->rm", g, relu(Z[:, None, :] + B[:, :, None]))
    idx = np.argmax(vals, axis=1)
    return B[np.arange(U.shape[0]), idx]


# ---------------------------------------------------------------------------
# CSV export of sampled point clouds
# ---------------------------------------------------------------------------


def save_points_csv(points, path):
    """Write 2-D/3-D point rows as CSV with an x,y[,z] header."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] not in (2, 3):
        raise InvalidInput("points must be rows of 2 or 3 coordinates")
    header = ["x", "y", "z"][: points.shape[1]]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in points:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
