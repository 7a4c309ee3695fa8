import numpy as np
import pytest

from oceantl import (
    ConfigError,
    GridSpec,
    MaskGrid,
    SsimConfig,
    TLField,
    error_summary,
    ssim,
    transect,
)


def brute_force_ssim(a, b, cfg):
    """Direct per-window evaluation of the SSIM definition (no shortcuts)."""
    n = cfg.window_size
    k1d = cfg.kernel()
    w = np.outer(k1d, k1d)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    L = cfg.dynamic_range if cfg.dynamic_range is not None else (hi - lo or 1.0)
    c1 = (cfg.k1 * L) ** 2
    c2 = (cfg.k2 * L) ** 2
    vals = []
    for i in range(a.shape[0] - n + 1):
        for j in range(a.shape[1] - n + 1):
            wa = a[i : i + n, j : j + n]
            wb = b[i : i + n, j : j + n]
            mu_a = (w * wa).sum()
            mu_b = (w * wb).sum()
            var_a = (w * (wa - mu_a) ** 2).sum()
            var_b = (w * (wb - mu_b) ** 2).sum()
            cov = (w * (wa - mu_a) * (wb - mu_b)).sum()
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(vals))


def test_self_similarity_is_one():
    rng = np.random.default_rng(7)
    x = rng.uniform(40.0, 140.0, size=(32, 48))
    assert abs(ssim(x, x) - 1.0) < 1e-9


def test_constant_fields_closed_form():
    a = np.zeros((16, 16))
    b = np.ones((16, 16))
    cfg = SsimConfig(dynamic_range=1.0)
    c1 = (cfg.k1 * 1.0) ** 2
    want = c1 / (1.0 + c1)
    assert abs(ssim(a, b, cfg) - want) < 1e-12


def test_symmetry():
    rng = np.random.default_rng(11)
    a = rng.normal(80.0, 15.0, size=(24, 30))
    b = rng.normal(80.0, 15.0, size=(24, 30))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


def test_rescaling_both_inputs_with_range():
    rng = np.random.default_rng(13)
    a = rng.normal(90.0, 10.0, size=(20, 20))
    b = a + rng.normal(0.0, 2.0, size=(20, 20))
    base = ssim(a, b, SsimConfig(dynamic_range=50.0))
    scaled = ssim(3.5 * a, 3.5 * b, SsimConfig(dynamic_range=3.5 * 50.0))
    assert abs(base - scaled) < 1e-9


def test_matches_brute_force_on_random_fields():
    rng = np.random.default_rng(17)
    a = rng.uniform(30.0, 160.0, size=(32, 32))
    b = a + rng.normal(0.0, 5.0, size=(32, 32))
    cfg = SsimConfig()
    assert abs(ssim(a, b, cfg) - brute_force_ssim(a, b, cfg)) < 1e-8


def test_shape_mismatch_raises():
    with pytest.raises(ConfigError):
        ssim(np.zeros((16, 16)), np.zeros((16, 17)))


def _field(grid, values):
    return TLField(grid, np.asarray(values, dtype=np.float32))


def test_transect_row_snap():
    grid = GridSpec(64, 256, 100_000.0, 3000.0)
    rng = np.random.default_rng(3)
    truth = _field(grid, rng.uniform(40, 150, size=grid.shape))
    tr = transect(truth, truth, 500.0)
    assert tr.row_index == 43
    assert np.all(tr.tl_pred_db == tr.tl_true_db)
    assert tr.ranges_m.size == 64
    assert abs(tr.snapped_depth_m - 43 * grid.dz) < 1e-9


def test_transect_out_of_domain_raises():
    grid = GridSpec(32, 32, 1000.0, 500.0)
    f = _field(grid, np.zeros(grid.shape))
    with pytest.raises(ConfigError):
        transect(f, f, 501.0)
    with pytest.raises(ConfigError):
        transect(f, f, -1.0)


def test_transect_csv_roundtrip(tmp_path):
    grid = GridSpec(16, 16, 800.0, 400.0)
    rng = np.random.default_rng(5)
    pred = _field(grid, rng.uniform(40, 150, size=grid.shape))
    truth = _field(grid, rng.uniform(40, 150, size=grid.shape))
    tr = transect(pred, truth, 200.0)
    out = tmp_path / "t.csv"
    tr.to_csv(out)
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "range_m,tl_pred_db,tl_true_db"
    assert len(rows) == 17
    got = np.array([r.split(",") for r in rows[1:]], dtype=np.float64)
    np.testing.assert_allclose(got[:, 0], tr.ranges_m, rtol=1e-5)
    np.testing.assert_allclose(got[:, 1], tr.tl_pred_db, rtol=1e-5)


def _mask_with_bottom(grid, sub_rows):
    m = np.zeros(grid.shape, dtype=np.uint8)
    if sub_rows:
        m[:, -sub_rows:] = 1
    return MaskGrid(grid, m)


def test_error_summary_identical_fields():
    grid = GridSpec(32, 32, 1000.0, 500.0)
    rng = np.random.default_rng(9)
    v = rng.uniform(40, 150, size=grid.shape)
    f = _field(grid, v)
    rep = error_summary(f, f, _mask_with_bottom(grid, 4))
    assert rep.mean_abs_db == 0.0
    assert rep.rmse_db == 0.0
    assert rep.p95_abs_db == 0.0
    assert abs(rep.ssim - 1.0) < 1e-9
    assert abs(rep.ssim_water - 1.0) < 1e-9


def test_error_summary_constant_offset():
    grid = GridSpec(32, 32, 1000.0, 500.0)
    rng = np.random.default_rng(21)
    v = rng.uniform(40, 150, size=grid.shape)
    truth = _field(grid, v)
    pred = _field(grid, v + 3.0)
    rep = error_summary(pred, truth, _mask_with_bottom(grid, 0))
    assert abs(rep.mean_abs_db - 3.0) < 1e-5
    assert abs(rep.rmse_db - 3.0) < 1e-5
    assert abs(rep.p95_abs_db - 3.0) < 1e-5


def test_error_summary_ignores_sub_bottom_error():
    grid = GridSpec(32, 32, 1000.0, 500.0)
    rng = np.random.default_rng(23)
    v = rng.uniform(40, 150, size=grid.shape).astype(np.float32)
    truth = _field(grid, v)
    mask = _mask_with_bottom(grid, 6)
    corrupted = v.copy()
    corrupted[:, -6:] += 50.0
    pred = _field(grid, corrupted)
    rep = error_summary(pred, truth, mask)
    assert rep.mean_abs_db == 0.0
    assert rep.rmse_db == 0.0


def test_error_summary_reports_dynamic_range():
    grid = GridSpec(32, 32, 1000.0, 500.0)
    a = np.full(grid.shape, 50.0)
    a[0, 0] = 150.0
    f = _field(grid, a)
    rep = error_summary(f, f, _mask_with_bottom(grid, 2))
    assert abs(rep.dynamic_range - 100.0) < 1e-5
