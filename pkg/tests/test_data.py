import numpy as np
import pytest

from recursive_lle import data
from recursive_lle.data import DatasetError, DatasetManifest, Level, SampleRecord
from recursive_lle.imgstats import mean_brightness


@pytest.mark.parametrize("mean,level", [
    (0.0, Level.LEVEL_1), (0.10, Level.LEVEL_1), (0.15, Level.LEVEL_2), (0.2999, Level.LEVEL_2),
    (0.30, Level.LEVEL_3), (0.45, Level.LEVEL_4), (0.55, Level.LEVEL_4), (0.6, Level.LEVEL_4),
    (0.62, None), (1.0, None),
])
def test_bucket_for(mean, level):
    assert data.bucket_for(mean) is level


def test_record_validates_level():
    with pytest.raises(ValueError):
        SampleRecord("a.png", 0.5, Level.LEVEL_1, "train")
    with pytest.raises(ValueError):
        SampleRecord("a.png", 0.1, Level.LEVEL_1, "val")


def test_manifest_round_trip(tmp_path):
    recs = [SampleRecord(f"/x/{k}.png", m, data.bucket_for(m), "train" if k % 2 else "test")
            for k, m in enumerate([0.1, 0.1 + 1e-13, 0.3333333333333333, 0.6])]
    man = DatasetManifest(recs)
    man.write(tmp_path / "m.tsv")
    back = DatasetManifest.read(tmp_path / "m.tsv")
    assert sorted(back.records, key=lambda r: r.path) == sorted(recs, key=lambda r: r.path)
    assert back.counts() == man.counts()


def test_manifest_read_errors(tmp_path):
    with pytest.raises(DatasetError):
        DatasetManifest.read(tmp_path / "nope.tsv")
    bad = tmp_path / "bad.tsv"
    bad.write_text("a.png\t0.1\n")
    with pytest.raises(DatasetError):
        DatasetManifest.read(bad)


def test_image_io_8_and_16_bit(tmp_path, rng):
    import cv2

    img = rng.random((6, 5, 3))
    data.write_image(tmp_path / "a.png", img)
    back = data.read_image(tmp_path / "a.png")
    assert back.shape == (6, 5, 3)
    np.testing.assert_allclose(back, np.rint(img * 255) / 255, atol=1e-12)
    raw16 = (rng.random((4, 4, 3)) * 65535).astype(np.uint16)
    cv2.imwrite(str(tmp_path / "b.png"), raw16)
    np.testing.assert_allclose(data.read_image(tmp_path / "b.png"), raw16[:, :, ::-1] / 65535.0)
    with pytest.raises(DatasetError):
        data.read_image(tmp_path / "missing.png")


@pytest.fixture
def synth_dir(tmp_path):
    bases = data.synthetic_bases(4, size=32, seed=3)
    data.write_synthetic_levels(bases, tmp_path / "ds")
    (tmp_path / "ds" / "broken.png").write_bytes(b"not an image")
    data.write_image(tmp_path / "ds" / "bright.png", np.full((8, 8, 3), 0.9))
    return tmp_path / "ds"


def test_scan_and_bucket(synth_dir):
    man = data.scan_and_bucket(synth_dir, split_fraction=0.3, seed=0)
    assert len(man.records) == 16
    assert all(v == 4 for v in man.counts().values())
    assert all(r.level == Level(int(r.path[-5])) for r in man.records)
    again = data.scan_and_bucket(synth_dir, split_fraction=0.3, seed=0)
    assert [(r.path, r.split) for r in man.records] == [(r.path, r.split) for r in again.records]
    train = {r.path for r in man.select(split="train")}
    test = {r.path for r in man.select(split="test")}
    assert not train & test and len(train | test) == 16


def test_scan_empty_dir(tmp_path):
    with pytest.raises(DatasetError):
        data.scan_and_bucket(tmp_path)


def test_sample_batch(synth_dir):
    man = data.scan_and_bucket(synth_dir, split_fraction=0.0)
    images, recs = data.sample_batch(man, [Level.LEVEL_4], 8, 32, np.random.default_rng(5))
    assert images.shape == (8, 32, 32, 3)
    assert all(r.level is Level.LEVEL_4 for r in recs)
    crops, _ = data.sample_batch(man, None, 3, 16, np.random.default_rng(5))
    assert crops.shape == (3, 16, 16, 3)
    a, ra = data.sample_batch(man, None, 4, 16, np.random.default_rng(9))
    b, rb = data.sample_batch(man, None, 4, 16, np.random.default_rng(9))
    assert np.array_equal(a, b) and ra == rb
    with pytest.raises(DatasetError):
        data.sample_batch(man, [Level.LEVEL_4], 2, 16, np.random.default_rng(0), split="test")


def test_crop_or_pad_small_image_to_multiple_of_four(rng):
    out = data.crop_or_pad(rng.random((10, 7, 3)), 16, rng)
    assert out.shape == (12, 8, 3)


def test_synthetic_darken():
    base = np.full((8, 8, 3), 0.55)
    out = data.synthetic_darken(base, Level.LEVEL_1)
    assert 0 <= mean_brightness(out) < 0.15
    assert out.min() >= 0 and out.max() <= 1
    bright = np.linspace(0.4, 1.0, 192).reshape(8, 8, 3)
    for level in Level:
        assert data.in_level(mean_brightness(data.synthetic_darken(bright, level, gamma=1.2)), level)
    with pytest.raises(DatasetError):
        data.synthetic_darken(np.full((4, 4, 3), 0.1), Level.LEVEL_2)


def test_darken_identity_at_unit_gain_gamma():
    base = np.random.default_rng(0).random((4, 4, 3))
    np.testing.assert_array_equal(np.clip(1.0 * base ** 1.0, 0, 1), base)
