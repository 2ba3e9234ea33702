import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellsplat.errors import FormatError, ShapeMismatchError
from cellsplat.formats.images import write_image
from cellsplat.metrics import (
    PSNR_CAP,
    ColorCorrection,
    apply_color_correction,
    evaluate_directories,
    fit_color_correction,
    image_metrics,
    mse,
    psnr,
)


def test_psnr_identical_hits_cap():
    a = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert psnr(a, a) == PSNR_CAP == 100.0


def test_psnr_constant_offset():
    a = np.full((8, 8, 3), 0.3)
    assert psnr(a, a + 0.1) == pytest.approx(20.0)


def test_psnr_matches_scalar_formula():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(5, 6, 3)), rng.uniform(size=(5, 6, 3))
    total = 0.0
    for v in (a - b).ravel():
        total += v * v
    want = 10 * np.log10(1 / (total / a.size))
    assert psnr(a, b) == pytest.approx(want, rel=1e-12)
    assert psnr(a, b) == psnr(b, a)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


def test_identity_correction():
    r = np.random.default_rng(2).uniform(size=(6, 6, 3))
    cc = fit_color_correction(r, r)
    np.testing.assert_allclose(cc.gain, 1.0)
    np.testing.assert_allclose(cc.bias, 0.0, atol=1e-12)


def test_affine_pair_recovered_exactly():
    r = np.random.default_rng(3).uniform(size=(16, 16, 3))
    gt = 0.5 * r + 0.1
    cc = fit_color_correction(r, gt)
    np.testing.assert_allclose(cc.gain, 0.5)
    np.testing.assert_allclose(cc.bias, 0.1)
    assert mse(apply_color_correction(r, cc), gt) < 1e-12


def test_constant_channel_is_degenerate():
    r = np.random.default_rng(4).uniform(size=(6, 6, 3))
    r[..., 1] = 0.4
    gt = np.random.default_rng(5).uniform(size=(6, 6, 3))
    cc = fit_color_correction(r, gt)
    assert cc.gain[1] == 0.0 and cc.bias[1] == pytest.approx(gt[..., 1].mean())
    g = fit_color_correction(np.zeros((4, 4, 3)), gt[:4, :4], model="gain")
    assert g.gain == (0.0, 0.0, 0.0) and g.bias == (0.0, 0.0, 0.0)


def test_gain_model_and_unknown_model():
    r = np.random.default_rng(6).uniform(size=(6, 6, 3))
    cc = fit_color_correction(r, 2 * r, model="gain")
    np.testing.assert_allclose(cc.gain, 2.0)
    with pytest.raises(ValueError):
        fit_color_correction(r, r, model="full")
    with pytest.raises(ValueError):
        ColorCorrection((np.nan, 1.0, 1.0), (0.0, 0.0, 0.0))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), model=st.sampled_from(["affine", "gain"]))
def test_correction_never_increases_channel_mse(seed, model):
    rng = np.random.default_rng(seed)
    r, gt = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    corrected = apply_color_correction(r, fit_color_correction(r, gt, model))
    for c in range(3):
        assert mse(corrected[..., c], gt[..., c]) <= mse(r[..., c], gt[..., c]) + 1e-15


def test_correction_matches_lstsq_oracle():
    rng = np.random.default_rng(7)
    r, gt = rng.uniform(size=(10, 9, 3)), rng.uniform(size=(10, 9, 3))
    cc = fit_color_correction(r, gt)
    for c in range(3):
        A = np.column_stack([r[..., c].ravel(), np.ones(90)])
        (k, b), *_ = np.linalg.lstsq(A, gt[..., c].ravel(), rcond=None)
        assert cc.gain[c] == pytest.approx(k) and cc.bias[c] == pytest.approx(b)


def test_image_metrics_keys():
    rng = np.random.default_rng(8)
    r, gt = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
    m = image_metrics(r, gt)
    assert set(m) == {"mse", "psnr", "ssim", "gain", "bias"}
    assert set(image_metrics(r, gt, correct=False)) == {"mse", "psnr", "ssim"}


def test_evaluate_directories(tmp_path):
    rng = np.random.default_rng(9)
    (tmp_path / "r").mkdir()
    (tmp_path / "g").mkdir()
    for k in range(3):
        img = rng.uniform(size=(16, 16, 3))
        write_image(img, tmp_path / "r" / f"{k}.png")
        write_image(img, tmp_path / "g" / f"{k}.png")
    write_image(img, tmp_path / "r" / "extra.png")
    out = evaluate_directories(tmp_path / "r", tmp_path / "g")
    assert [row["image"] for row in out["images"]] == ["0.png", "1.png", "2.png"]
    assert out["mean"]["psnr"] == PSNR_CAP
    with pytest.raises(FormatError):
        evaluate_directories(tmp_path / "r", tmp_path / "missing")
