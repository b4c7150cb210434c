import numpy as np
import pytest

from convex_relu.exceptions import DegenerateExtreme, InvalidInput, PatternInfeasible
from convex_relu.geometry import (
    Neuron,
    activation_pattern,
    enumerate_extremes_1d,
    enumerate_extremes_rankone,
    extreme_point_basis,
    extreme_point_direction,
    hull_distance,
    max_correlation,
    pattern_matches,
    rectified_support,
    sample_polar,
    sample_rectified_ellipsoid,
    save_points_csv,
    spike_free_check,
)
from convex_relu.linalg import pseudo_inverse, relu, whiten, Dataset


def random_whitened(n, d, seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(A=rng.standard_normal((n, d)), y=np.zeros(n))
    return whiten(ds).A_white


# ---------------------------------------------------------------------------
# neuron basics
# ---------------------------------------------------------------------------


def test_neuron_requires_unit_norm():
    with pytest.raises(InvalidInput):
        Neuron(u=np.array([1.0, 1.0]))
    Neuron(u=np.array([3.0, 4.0]) / 5.0)  # fine


def test_neuron_closed_form_exempt_from_norm_check():
    Neuron(u=np.array([0.0, 0.0]), provenance="closed-form")


def test_activation_pattern_boundary_counts_active():
    A = np.array([[1.0], [-1.0]])
    mask = activation_pattern(A, np.array([1.0]), b=-1.0)
    assert mask.tolist() == [True, False]  # a=1 sits exactly on the boundary


def test_pattern_matches_is_lenient_on_boundary():
    A = np.array([[1.0], [0.5], [-1.0]])
    u, b = np.array([1.0]), -1.0
    assert pattern_matches(A, u, b, {0})
    assert pattern_matches(A, u, b, set())  # the boundary sample may go either way


# ---------------------------------------------------------------------------
# spike-free certification
# ---------------------------------------------------------------------------


def test_spike_free_whitened_certificate():
    A = random_whitened(6, 9, seed=0)
    v = spike_free_check(A)
    assert v.status == "certified-spike-free"
    assert v.method == "analytic-whitened"


def test_spike_free_rank_one_nonnegative():
    rng = np.random.default_rng(1)
    c = np.abs(rng.standard_normal(7))
    a = rng.standard_normal(4)
    v = spike_free_check(np.outer(c, a))
    assert v.status == "certified-spike-free"
    assert v.method == "analytic-rank-one"


def test_spike_free_rank_one_mixed_sign_inconclusive():
    c = np.array([1.0, -2.0, 3.0])
    a = np.array([1.0, 1.0])
    v = spike_free_check(np.outer(c, a))
    assert v.status == "inconclusive"
    assert v.max_ratio < 1.0


def test_spike_free_diagonal_gram():
    rng = np.random.default_rng(2)
    Q = np.linalg.qr(rng.standard_normal((8, 8)))[0][:, :4]  # orthonormal columns
    sig = np.array([0.5, 1.0, 2.0, 3.0])
    A = (Q * sig).T @ np.eye(8)  # rows sig_i * q_i^T
    v = spike_free_check(A)
    assert v.status == "certified-spike-free"
    assert v.method == "analytic-diagonal"


def test_spike_free_adversarial_matches_brute_force():
    A = np.array([[1.0, 0.99], [-1.0, 0.99]])
    P = pseudo_inverse(A)
    thetas = np.linspace(0.0, 2.0 * np.pi, 10_000, endpoint=False)
    U = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    ratios = np.linalg.norm(relu(U @ A.T) @ P.T, axis=1)
    grid_max = ratios.max()
    v = spike_free_check(A, seed=3)
    assert v.method == "numeric-search"
    if grid_max > 1.0 + 1e-6:
        assert v.status == "certified-not-spike-free"
        assert v.max_ratio >= grid_max - 1e-4
        # the witness must reproduce its claimed violation
        direct = np.linalg.norm(P @ relu(A @ v.witness_u))
        assert direct > 1.0 + 1e-6
    else:
        assert v.status == "inconclusive"
        assert abs(v.max_ratio - grid_max) < 1e-4


def test_spike_free_witnessed_violation():
    # nearly singular full-rank matrix: u = (1, 0) maps to (1, 0) after the
    # rectifier, whose preimage (1, 10) leaves the unit ball by a factor 10
    A = np.array([[1.0, 0.0], [-1.0, 0.1]])
    v = spike_free_check(A, seed=5)
    assert v.status == "certified-not-spike-free"
    P = pseudo_inverse(A)
    assert np.linalg.norm(P @ relu(A @ v.witness_u)) > 1.0 + 1e-6
    assert v.max_ratio > 5.0


def test_spike_free_tall_matrix_stays_inconclusive():
    # n > d Gaussian data fails spike-freeness only through the column-space
    # condition, which has no ratio witness: the check must not certify
    rng = np.random.default_rng(4)
    A = rng.standard_normal((12, 3))
    v = spike_free_check(A, seed=5)
    assert v.status == "inconclusive"
    assert v.max_ratio < 1.0


def test_spike_free_fraction_grows_with_dimension():
    # wide-data smoke check: certified ratios <= 1 + 1e-3 get more common as
    # d grows at fixed n
    fracs = []
    for d in (10, 100):
        ok = 0
        trials = 15
        for s in range(trials):
            A = np.random.default_rng((6, d, s)).standard_normal((5, d))
            v = spike_free_check(A, restarts=60, seed=s)
            if v.status == "certified-spike-free" or v.max_ratio <= 1.0 + 1e-3:
                ok += 1
        fracs.append(ok / trials)
    assert fracs[1] >= fracs[0]
    assert fracs[1] >= 0.8


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def test_sample_rectified_ellipsoid_spike_free_inclusion():
    A = random_whitened(5, 8, seed=7)
    pts = sample_rectified_ellipsoid(A, count=200, seed=1)
    assert pts.shape == (200, 5)
    P = pseudo_inverse(A)
    assert np.all(np.linalg.norm(pts @ P.T, axis=1) <= 1.0 + 1e-6)
    assert np.all(pts >= 0.0)


def test_sample_polar_identity_closed_form():
    A = np.eye(2)
    pts = sample_polar(A, count=40, seed=2)
    assert pts.shape[1] == 2
    for v in pts:
        s = np.linalg.norm(relu(v))  # support value of the recovered direction
        assert abs(s - 1.0) < 1e-9


def test_sample_polar_points_are_feasible():
    rng = np.random.default_rng(8)
    A = rng.standard_normal((4, 3))
    pts = sample_polar(A, count=25, seed=3, restarts=40)
    U = np.array([g / np.linalg.norm(g)
                  for g in rng.standard_normal((1000, 3))])
    acts = relu(U @ A.T)  # 1000 x 4
    for v in pts:
        assert np.max(acts @ v) <= 1.0 + 1e-3


def test_rectified_support_whitened_matches_closed_form():
    A = random_whitened(5, 7, seed=9)
    g = np.random.default_rng(10).standard_normal(5)
    val, u = rectified_support(A, g)
    assert abs(val - np.linalg.norm(relu(g))) < 1e-8
    assert abs(g @ relu(A @ u) - val) < 1e-8
    assert np.linalg.norm(u) <= 1.0 + 1e-9


# ---------------------------------------------------------------------------
# extreme points
# ---------------------------------------------------------------------------


def test_extreme_point_basis_two_points():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    nrn = extreme_point_basis(A, 0)
    assert np.allclose(nrn.u, np.array([1.0, -1.0]) / np.sqrt(2.0))
    assert abs(nrn.b - 1.0 / np.sqrt(2.0)) < 1e-12
    assert nrn.provenance == "basis-direction"
    assert nrn.meta["sample_index"] == 0


def test_extreme_point_basis_one_dimensional():
    A = np.array([[0.0], [1.0], [2.0]])
    nrn = extreme_point_basis(A, 2)
    assert nrn.u[0] == pytest.approx(1.0)
    assert nrn.b == pytest.approx(-1.0)
    acts = nrn.activations(A)
    assert acts[2] > 0.0 and np.all(acts[:2] <= 1e-8)


def test_extreme_point_basis_interior_point_degenerate():
    A = np.array([[0.0], [1.0], [2.0]])
    with pytest.raises(DegenerateExtreme):
        extreme_point_basis(A, 1)


def test_extreme_point_basis_random_separation():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((6, 21))
    for i in range(6):
        nrn = extreme_point_basis(A, i)
        z = A @ nrn.u + nrn.b
        assert z[i] > 0.0
        z[i] = -np.inf
        assert np.max(z) <= 1e-8


def test_hull_distance_matches_residual():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert hull_distance(A, 0) == pytest.approx(np.sqrt(2.0), abs=1e-8)
    # equilateral triangle: all distances equal
    ang = np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0])
    T = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    dists = [hull_distance(T, i) for i in range(3)]
    assert np.ptp(dists) < 1e-8


def test_extreme_point_direction_reduces_to_basis():
    rng = np.random.default_rng(12)
    A = rng.standard_normal((5, 4))
    for i in range(5):
        try:
            base = extreme_point_basis(A, i)
        except DegenerateExtreme:
            continue
        alpha = np.zeros(5)
        alpha[i] = 1.0
        nrn = extreme_point_direction(A, alpha, {i})
        assert np.linalg.norm(nrn.u - base.u) < 1e-6
        assert abs(nrn.b - base.b) < 1e-6
        assert nrn.meta["inner_gap"] < 1e-6


def test_extreme_point_direction_one_dimensional():
    A = np.array([[-2.0], [-1.0], [0.0], [1.0], [2.0]])
    alpha = np.array([0.0, 0.0, 0.0, 0.5, 1.0])
    nrn = extreme_point_direction(A, alpha, {3, 4})
    assert abs(abs(nrn.u[0]) - 1.0) < 1e-10
    assert nrn.b == pytest.approx(-float(nrn.u[0] * A[2, 0]), abs=1e-8) or \
        nrn.b == pytest.approx(-float(nrn.u[0] * A[3, 0]), abs=1e-8)
    assert pattern_matches(A, nrn.u, nrn.b, {3, 4}, tol=1e-7)


def test_extreme_point_direction_pattern_and_representer():
    rng = np.random.default_rng(13)
    A = rng.standard_normal((6, 3))
    u0 = rng.standard_normal(3)
    u0 /= np.linalg.norm(u0)
    b0 = float(-np.median(A @ u0))
    S = set(np.where(A @ u0 + b0 > 1e-6)[0].tolist())
    if not S or len(S) == 6:
        pytest.skip("degenerate random pattern")
    alpha = rng.standard_normal(6)
    nrn = extreme_point_direction(A, alpha, S)
    assert pattern_matches(A, nrn.u, nrn.b, S, tol=1e-7)
    assert nrn.meta["inner_gap"] < 1e-6
    k = nrn.meta["anchor"]
    span = np.array([A[t] - A[k] for t in range(6) if t != k]).T
    proj, *_ = np.linalg.lstsq(span, nrn.u, rcond=None)
    assert np.linalg.norm(span @ proj - nrn.u) < 1e-6


def test_extreme_point_direction_zero_sum_interval():
    A = np.array([[-2.0], [-1.0], [0.0], [1.0], [2.0]])
    alpha = np.array([0.0, 0.0, 0.0, -1.0, 1.0])  # zero multiplier sum on S
    nrn = extreme_point_direction(A, alpha, {3, 4})
    assert nrn.u[0] == pytest.approx(1.0)
    lo, hi = nrn.meta["bias_interval"]
    assert nrn.b == pytest.approx(lo)
    assert lo == pytest.approx(-1.0)
    assert hi == pytest.approx(0.0)
    assert pattern_matches(A, nrn.u, nrn.b, {3, 4}, tol=1e-7)


def test_extreme_point_direction_infeasible_pattern():
    A = np.array([[0.0], [1.0], [2.0]])
    with pytest.raises(PatternInfeasible):
        extreme_point_direction(A, np.array([1.0, 0.0, 1.0]), {0, 2})


def test_enumerate_extremes_1d_counts_and_values():
    a = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    neurons = enumerate_extremes_1d(a)
    assert len(neurons) == 10
    plus_b = sorted(n.b for n in neurons if n.u[0] > 0)
    assert plus_b == [-2.0, -1.0, 0.0, 1.0, 2.0]
    # the eight biases of the classic interpolation dictionary all appear
    got = {(float(n.u[0]), float(n.b)) for n in neurons}
    for u, b in [(1, 2), (1, 1), (1, 0), (1, -1), (-1, -1), (-1, 0), (-1, 1), (-1, 2)]:
        assert (float(u), float(b)) in got


def test_enumerate_extremes_1d_dedups():
    assert len(enumerate_extremes_1d([1.0, 1.0, 2.0])) == 4


def test_enumerate_extremes_rankone():
    c = np.array([0.5, 2.0])
    a = np.array([3.0, 4.0])
    neurons = enumerate_extremes_rankone(c, a)
    assert len(neurons) == 4
    for nrn in neurons:
        s = np.sign(nrn.u @ a)
        assert np.allclose(nrn.u, s * a / 5.0)
        assert nrn.b == pytest.approx(-s * 5.0 * (0.5 if abs(nrn.b) == 2.5 else 2.0))
    with pytest.raises(InvalidInput):
        enumerate_extremes_rankone(c, np.zeros(2))


# ---------------------------------------------------------------------------
# correlation verification engine
# ---------------------------------------------------------------------------


def test_max_correlation_whitened_closed_form():
    A = random_whitened(6, 8, seed=14)
    v = np.random.default_rng(15).standard_normal(6)
    val, nrn = max_correlation(A, v)
    expect = max(np.linalg.norm(relu(v)), np.linalg.norm(relu(-v)))
    assert abs(val - expect) < 1e-8
    assert abs(abs(v @ relu(A @ nrn.u)) - val) < 1e-8


def test_max_correlation_1d_bias_matches_enumeration():
    a = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    A = a[:, None]
    v = np.array([1.0, -3.0, 2.0, 1.0, -1.0])  # zero-sum
    val, nrn = max_correlation(A, v, use_bias=True)
    brute = max(abs(v @ nrn2.activations(A)) for nrn2 in enumerate_extremes_1d(a))
    assert abs(val - brute) < 1e-12
    assert abs(v @ nrn.activations(A)) == pytest.approx(val)


def test_max_correlation_general_bias_beats_sampling():
    rng = np.random.default_rng(16)
    A = rng.standard_normal((6, 3))
    v = rng.standard_normal(6)
    v -= v.mean()  # zero-sum keeps the biased problem bounded
    val, _ = max_correlation(A, v, use_bias=True, restarts=60, seed=4)
    # random lower bound must not exceed the search result
    best = 0.0
    for _ in range(2000):
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        b = float(rng.uniform(-3.0, 3.0))
        best = max(best, abs(v @ relu(A @ u + b)))
    assert val >= best - 1e-6


# ---------------------------------------------------------------------------
# csv export
# ---------------------------------------------------------------------------


def test_save_points_csv_roundtrip(tmp_path):
    pts = np.array([[1.0, 2.0], [3.5, -0.25]])
    path = tmp_path / "cloud.csv"
    save_points_csv(pts, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "x,y"
    back = np.array([[float(t) for t in ln.split(",")] for ln in lines[1:]])
    assert np.array_equal(back, pts)
    with pytest.raises(InvalidInput):
        save_points_csv(np.zeros((2, 5)), tmp_path / "bad.csv")
