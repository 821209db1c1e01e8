import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from bornovit.data import (AugmentConfig, apply_affine, augment, bilinear_resize, color_jitter, crop_page_grid,
                           decode_image, kfold_split, load_dataset, resize_to_input, sample_augment_params,
                           save_page_cells)
from bornovit.errors import ConfigError, DataError


def _png(path, value=128, size=(8, 8), mode="L"):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new(mode, size, value).save(path)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def test_load_dataset_orders_classes_and_files(tmp_path):
    for cls in ("kha", "ka", "ga"):
        for name in ("b.png", "a.png"):
            _png(tmp_path / cls / name)
    ds = load_dataset(tmp_path)
    assert ds.class_names == ["ga", "ka", "kha"]
    assert [s.source_path.split("/")[-2:] for s in ds.samples][:2] == [["ga", "a.png"], ["ga", "b.png"]]
    assert ds.labels.tolist() == [0, 0, 1, 1, 2, 2]
    assert ds.samples[0].pixels.shape == (8, 8, 1)


def test_load_dataset_skips_corrupt_files(tmp_path):
    _png(tmp_path / "a" / "ok.png")
    (tmp_path / "a" / "bad.png").write_bytes(b"not an image")
    ds = load_dataset(tmp_path)
    assert len(ds) == 1
    assert len(ds.errors) == 1 and "bad.png" in ds.errors[0][0]


def test_load_dataset_warns_on_empty_class(tmp_path, caplog):
    _png(tmp_path / "a" / "x.png")
    (tmp_path / "empty").mkdir()
    with caplog.at_level(logging.WARNING):
        ds = load_dataset(tmp_path)
    assert ds.class_names == ["a", "empty"]
    assert "no images" in caplog.text


def test_load_dataset_many_classes(tmp_path):
    for i in range(84):
        _png(tmp_path / f"c{i:03d}" / "0.png", value=i)
    ds = load_dataset(tmp_path)
    assert len(ds.class_names) == 84
    assert sorted(set(ds.labels.tolist())) == list(range(84))


def test_load_dataset_from_manifest(tmp_path):
    _png(tmp_path / "imgs" / "1.png")
    _png(tmp_path / "imgs" / "2.png", mode="RGB", value=(10, 20, 30))
    manifest = tmp_path / "m.csv"
    manifest.write_text("imgs/2.png,kha\nimgs/1.png,ka\n")
    ds = load_dataset(tmp_path, manifest)
    assert ds.class_names == ["ka", "kha"]
    assert [s.label for s in ds.samples] == [0, 1]
    assert ds.samples[1].pixels.shape == (8, 8, 3)


def test_missing_root_raises(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope")


def test_decode_rejects_garbage(tmp_path):
    p = tmp_path / "x.png"
    p.write_bytes(b"\x89PNG garbage")
    with pytest.raises(DataError):
        decode_image(p)


# ---------------------------------------------------------------------------
# resizing
# ---------------------------------------------------------------------------

def test_resize_identity_at_target_size(rng):
    img = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
    out = resize_to_input(img, 224)
    assert out.shape == (3, 224, 224) and out.dtype == np.float32
    np.testing.assert_allclose(out, np.transpose(img, (2, 0, 1)) / 255.0, atol=1e-6)


def test_resize_constant_gray_image():
    out = resize_to_input(np.full((50, 70, 1), 128, np.uint8), 224)
    assert out.shape == (3, 224, 224)
    np.testing.assert_allclose(out, 128 / 255, atol=1e-6)


def test_resize_keeps_corners():
    img = np.array([[0, 255], [255, 0]], np.uint8)[..., None]
    out = resize_to_input(img, 4)[0]
    assert out[0, 0] == 0 and out[0, 3] == 1 and out[3, 0] == 1 and out[3, 3] == 0


def test_bilinear_midpoint():
    out = bilinear_resize(np.array([[0.0, 1.0]]), 1, 3)
    np.testing.assert_allclose(out, [[0.0, 0.5, 1.0]])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(2, 48))
def test_resize_output_range(h, w, size):
    img = np.random.default_rng(h * 100 + w).integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    out = resize_to_input(img, size)
    assert out.shape == (3, size, size)
    assert out.min() >= 0 and out.max() <= 1


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def test_disabled_augmentation_is_identity(rng):
    img = rng.random((3, 16, 16)).astype(np.float32)
    out = augment(img, AugmentConfig(enabled=False), rng)
    np.testing.assert_array_equal(out, img)


def test_translation_shifts_right_and_fills():
    img = np.random.default_rng(0).random((3, 224, 224)).astype(np.float32)
    dx = int(round(0.1 * 224))
    assert dx == 22
    out = apply_affine(img, (dx, 0), 0.0, fill=0.0)
    assert np.all(out[:, :, :22] == 0)
    np.testing.assert_allclose(out[:, :, 22:], img[:, :, :-22], atol=1e-6)


def test_shear_keeps_centre_row():
    img = np.random.default_rng(1).random((1, 9, 9)).astype(np.float32)
    out = apply_affine(img, (0, 0), 15.0)
    np.testing.assert_allclose(out[0, 4], img[0, 4], atol=1e-6)
    assert not np.allclose(out[0, 0], img[0, 0])


def test_brightness_saturates_at_one():
    out = color_jitter(np.full((3, 4, 4), 0.9, np.float32), brightness=1.2)
    np.testing.assert_array_equal(out, 1.0)


def test_neutral_jitter_is_identity(rng):
    img = rng.random((3, 5, 5)).astype(np.float32)
    np.testing.assert_array_equal(color_jitter(img), img)


def test_hue_rotation_permutes_primaries():
    red = np.zeros((3, 2, 2), np.float32)
    red[0] = 1.0
    green = color_jitter(red, hue=1 / 3)
    np.testing.assert_allclose(green[:, 0, 0], [0, 1, 0], atol=1e-6)


def test_sampled_params_stay_in_range(rng):
    cfg = AugmentConfig()
    for _ in range(200):
        p = sample_augment_params(cfg, (224, 224), rng)
        assert abs(p.translate_px[0]) <= 22 and abs(p.translate_px[1]) <= 22
        assert abs(p.shear_deg) <= 20
        for f in (p.brightness, p.contrast, p.saturation):
            assert 0.8 <= f <= 1.2
        assert abs(p.hue) <= 0.1


def test_augment_is_seeded_and_bounded():
    img = np.random.default_rng(2).random((3, 32, 32)).astype(np.float32)
    a = augment(img, AugmentConfig(), np.random.default_rng(5))
    b = augment(img, AugmentConfig(), np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_augment_config_rejects_negative():
    with pytest.raises(ConfigError):
        AugmentConfig(shear_deg=-1)


# ---------------------------------------------------------------------------
# k-fold
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n", [10, 53, 128])
def test_kfold_partition(n):
    split = kfold_split(n, 5, seed=0)
    folds = [split.fold(f) for f in range(5)]
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert sorted(np.concatenate(folds).tolist()) == list(range(n))
    for r in range(5):
        train, val, test = split.roles(r)
        assert not set(train) & set(val) and not set(train) & set(test) and not set(val) & set(test)
        assert len(train) + len(val) + len(test) == n
        np.testing.assert_array_equal(test, folds[r])
        np.testing.assert_array_equal(val, folds[(r + 1) % 5])


def test_kfold_every_sample_tested_once():
    split = kfold_split(53, 5, seed=3)
    tested = np.concatenate([split.roles(r)[2] for r in range(5)])
    assert sorted(tested.tolist()) == list(range(53))


def test_kfold_seeded():
    assert kfold_split(40, 5, seed=1) == kfold_split(40, 5, seed=1)
    assert kfold_split(40, 5, seed=1) != kfold_split(40, 5, seed=2)


def test_stratified_folds_balance_classes():
    labels = np.repeat(np.arange(4), 25)
    split = kfold_split(100, 5, seed=0, labels=labels)
    for f in range(5):
        counts = np.bincount(labels[split.fold(f)], minlength=4)
        assert counts.tolist() == [5, 5, 5, 5]


@pytest.mark.parametrize("n,k", [(3, 5), (10, 1)])
def test_kfold_rejects_bad_sizes(n, k):
    with pytest.raises(ConfigError):
        kfold_split(n, k)


# ---------------------------------------------------------------------------
# page cropping
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("h,w", [(1000, 600), (1003, 601)])
def test_crop_page_tiles_exactly(h, w):
    page = np.random.default_rng(0).integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    cells = crop_page_grid(page, 10, 6)
    assert len(cells) == 60
    if (h, w) == (1000, 600):
        assert all(c.shape == (100, 100, 3) for c in cells)
    assert sum(c.shape[0] * c.shape[1] for c in cells) == h * w
    rows = [np.concatenate(cells[r * 6:(r + 1) * 6], axis=1) for r in range(10)]
    np.testing.assert_array_equal(np.concatenate(rows, axis=0), page)


def test_crop_page_too_small():
    with pytest.raises(DataError):
        crop_page_grid(np.zeros((1, 1), np.uint8), 10, 6)


def test_save_page_cells_names(tmp_path):
    cells = crop_page_grid(np.zeros((20, 12, 1), np.uint8), 2, 3)
    paths = save_page_cells(cells, 3, tmp_path)
    assert [p.name for p in paths] == ["cell_0_0.png", "cell_0_1.png", "cell_0_2.png",
                                       "cell_1_0.png", "cell_1_1.png", "cell_1_2.png"]
    assert decode_image(paths[-1]).shape == (10, 4, 1)
