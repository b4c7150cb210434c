import numpy as np
import pytest

from convex_relu import (
    DataFormatError,
    InvalidInput,
    PatchSet,
    RFPipeline,
    SolverConfig,
    convex_rf_train,
    extract_patches,
    filters_from_patches,
    load_images_csv,
    load_pgm_dir,
    save_images_csv,
    zca_whiten_patches,
)
from convex_relu.linalg import relu


def band_images(n, seed):
    """Noisy 8x8 grayscale images, bright top half vs. bright bottom half."""
    rng = np.random.default_rng(seed)
    imgs, labs = [], []
    for i in range(n):
        img = 0.1 * rng.standard_normal((8, 8))
        lab = 1.0 if i % 2 == 0 else -1.0
        if lab > 0:
            img[:4] += 1.0
        else:
            img[4:] += 1.0
        imgs.append(img)
        labs.append(lab)
    return np.array(imgs), np.array(labs)


# ---------------------------------------------------------------------------
# patch extraction
# ---------------------------------------------------------------------------


def test_extract_patches_counts_and_determinism():
    imgs = np.random.default_rng(0).standard_normal((3, 6, 6))
    a = extract_patches(imgs, patch=3, stride=1, count=12, seed=5)
    b = extract_patches(imgs, patch=3, stride=1, count=12, seed=5)
    c = extract_patches(imgs, patch=3, stride=1, count=12, seed=6)
    assert a.P.shape == (12, 9)
    assert np.array_equal(a.P, b.P)
    assert not np.array_equal(a.P, c.P)
    assert np.abs(a.P.mean(axis=1)).max() <= 1e-8
    assert a.P.var(axis=1).max() <= 1.0 + 1e-8


def test_extract_patches_single_position_resamples():
    img = np.random.default_rng(1).standard_normal((1, 2, 2))
    ps = extract_patches(img, patch=2, stride=1, count=3, seed=1)
    assert ps.P.shape == (3, 4)
    assert np.array_equal(ps.P[0], ps.P[1])
    assert np.array_equal(ps.P[0], ps.P[2])


def test_extract_patches_constant_image_gives_zero_rows():
    ps = extract_patches(np.ones((1, 4, 4)), patch=2, stride=1, count=5, seed=0)
    assert np.abs(ps.P).max() == 0.0


def test_extract_patches_rejects_oversized_patch():
    with pytest.raises(InvalidInput):
        extract_patches(np.zeros((2, 8, 8)), patch=9, stride=1, count=4)


def test_patchset_rejects_unnormalized_rows():
    with pytest.raises(InvalidInput):
        PatchSet(P=np.array([[1.0, 2.0], [3.0, 4.0]]))


# ---------------------------------------------------------------------------
# whitening
# ---------------------------------------------------------------------------


def test_zca_map_symmetric_and_flag_set():
    rng = np.random.default_rng(3)
    ps = PatchSet(P=rng.standard_normal((50, 16)), whitened=True)
    out = zca_whiten_patches(ps, eps=0.1)
    assert out.whitened
    assert np.abs(out.zca_map - out.zca_map.T).max() < 1e-10
    cov = out.P.T @ out.P / out.P.shape[0]
    assert np.linalg.eigvalsh(cov).max() <= 1.0 + 1e-8


def test_zca_limits_identity_and_pure_scaling():
    rng = np.random.default_rng(4)
    P = rng.standard_normal((200, 6))
    cov = P.T @ P / P.shape[0]
    lam, V = np.linalg.eigh(cov)
    P = P @ (V * (1.0 / np.sqrt(lam))) @ V.T  # make rows exactly white
    ps = PatchSet(P=P, whitened=True)
    near_id = zca_whiten_patches(ps, eps=1e-9)
    assert np.abs(near_id.P - P).max() < 1e-4
    scaled = zca_whiten_patches(ps, eps=1e8)
    assert np.abs(scaled.P - P / 1e4).max() < 1e-8


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------


def test_filters_orthonormal_pair_gives_residual_directions():
    q1 = np.array([1.0, -1.0, 0.0, 0.0]) / np.sqrt(2)
    q2 = np.array([0.0, 0.0, 1.0, -1.0]) / np.sqrt(2)
    fs = filters_from_patches(PatchSet(P=np.vstack([q1, q2])))
    expect = (q1 - q2) / np.sqrt(2)
    assert len(fs) == 2
    assert np.abs(fs[0].u - expect).max() < 1e-12
    assert np.abs(fs[1].u + expect).max() < 1e-12


def test_filters_drop_exact_duplicate_once():
    rng = np.random.default_rng(6)
    base = rng.standard_normal((5, 4))
    base -= base.mean(axis=1, keepdims=True)
    stacked = np.vstack([base[0], base])  # first row repeated
    fs = filters_from_patches(PatchSet(P=stacked, whitened=True))
    assert len(fs) == 5
    assert [f.meta["sample_index"] for f in fs] == [0, 2, 3, 4, 5]


def test_filters_unit_norm_and_patch_span():
    imgs, _ = band_images(10, 21)
    ps = zca_whiten_patches(extract_patches(imgs, 6, 1, 25, seed=0), 0.1)
    fs = filters_from_patches(ps)
    assert fs
    U = np.stack([f.u for f in fs])
    assert np.abs(np.linalg.norm(U, axis=1) - 1.0).max() < 1e-8
    coef, *_ = np.linalg.lstsq(ps.P.T, U.T, rcond=None)
    assert np.abs(ps.P.T @ coef - U.T).max() < 1e-6


def test_filters_competitor_cap_is_deterministic():
    imgs, _ = band_images(8, 29)
    ps = extract_patches(imgs, 4, 2, 20, seed=2)
    a = filters_from_patches(ps, competitors=5, seed=3)
    b = filters_from_patches(ps, competitors=5, seed=3)
    assert len(a) == len(b) > 0
    assert np.array_equal(np.stack([f.u for f in a]), np.stack([f.u for f in b]))


# ---------------------------------------------------------------------------
# the trained pipeline
# ---------------------------------------------------------------------------


def test_single_position_feature_row_is_plain_activation():
    rng = np.random.default_rng(8)
    img = rng.standard_normal((3, 3))
    U = rng.standard_normal((4, 9))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    pipe = RFPipeline(patch=3, stride=1, pool=1, epsilon_norm=1e-5,
                      zca_eps=None, zca_map=None, filters=U, w=np.zeros(4))
    flat = img.ravel() - img.ravel().mean()
    pbar = flat / np.sqrt(flat.var() + 1e-5)
    assert np.array_equal(pipe.features(img[None])[0], relu(U @ pbar))


def test_band_classification_transfers_to_fresh_images():
    train_x, train_y = band_images(20, 11)
    test_x, test_y = band_images(20, 12)
    pipe, rep = convex_rf_train(train_x, train_y, patch=6, stride=1, pool=3,
                                count=40, beta=0.1, cfg=SolverConfig(seed=0))
    acc = float(np.mean(np.sign(pipe.predict(test_x)) == test_y))
    assert acc >= 0.9
    assert rep.extra["n_filters"] + rep.extra["dropped_patches"] == 40
    assert rep.extra["feature_dim"] == rep.extra["n_filters"]


def test_huge_penalty_zeroes_output_weights():
    imgs, labs = band_images(12, 13)
    pipe, _ = convex_rf_train(imgs, labs, 6, 1, 3, 15, beta=1e6,
                              cfg=SolverConfig(seed=0))
    assert np.abs(pipe.w).max() == 0.0


def test_pipeline_deterministic_across_runs_and_threads(monkeypatch):
    imgs, labs = band_images(12, 14)
    p1, _ = convex_rf_train(imgs, labs, 6, 1, 3, 20, 0.1, SolverConfig(seed=0))
    p2, _ = convex_rf_train(imgs, labs, 6, 1, 3, 20, 0.1, SolverConfig(seed=0))
    assert np.array_equal(p1.filters, p2.filters)
    assert np.array_equal(p1.w, p2.w)
    monkeypatch.setenv("CONVEX_RELU_THREADS", "3")
    p3, _ = convex_rf_train(imgs, labs, 6, 1, 3, 20, 0.1, SolverConfig(seed=0))
    assert np.array_equal(p1.filters, p3.filters)
    assert np.array_equal(p1.features(imgs), p3.features(imgs))


def test_pipeline_json_round_trip_is_exact():
    imgs, labs = band_images(10, 15)
    pipe, _ = convex_rf_train(imgs, labs, 6, 1, 3, 15, 0.1, SolverConfig(seed=0))
    back = RFPipeline.from_json(pipe.to_json())
    assert np.array_equal(back.w, pipe.w)
    assert np.array_equal(back.features(imgs), pipe.features(imgs))


def test_pool_must_divide_position_grid():
    imgs, labs = band_images(6, 16)
    with pytest.raises(InvalidInput):
        convex_rf_train(imgs, labs, patch=6, stride=1, pool=2, count=10,
                        beta=0.1)  # position grid is 3x3


# ---------------------------------------------------------------------------
# image ingestion
# ---------------------------------------------------------------------------


def test_images_csv_round_trip_and_line_numbers(tmp_path):
    imgs, _ = band_images(4, 17)
    path = tmp_path / "imgs.csv"
    save_images_csv(path, imgs)
    assert np.array_equal(load_images_csv(path), imgs)

    lines = path.read_text().splitlines()
    lines[3] = lines[3].rsplit(",", 1)[0]  # drop a pixel from line 4
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataFormatError) as err:
        load_images_csv(bad)
    assert err.value.line == 4

    bad.write_text("8,8\n1.0\n")
    with pytest.raises(DataFormatError) as err:
        load_images_csv(bad)
    assert err.value.line == 1


def test_pgm_directory_ascii_and_binary_agree(tmp_path):
    imgs, _ = band_images(2, 18)
    gray = (np.clip(imgs[0], 0.0, 2.0) * 100).astype(int)
    rows = "\n".join(" ".join(str(v) for v in row) for row in gray)
    (tmp_path / "a.pgm").write_text(f"P2\n# synthetic\n8 8\n255\n{rows}\n")
    (tmp_path / "b.pgm").write_bytes(
        b"P5\n8 8\n255\n" + bytes(gray.astype(np.uint8).ravel().tolist()))
    stack = load_pgm_dir(tmp_path)
    assert stack.shape == (2, 8, 8)
    assert np.array_equal(stack[0], stack[1])

    (tmp_path / "c.pgm").write_text("P2\n2 2\n255\n1 2 3 4\n")
    with pytest.raises(DataFormatError):
        load_pgm_dir(tmp_path)

    empty = tmp_path / "none"
    empty.mkdir()
    with pytest.raises(InvalidInput):
        load_pgm_dir(empty)
