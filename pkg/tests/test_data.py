import numpy as np
import pytest
import tifffile
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from srddpm.data import (
    DatasetError,
    SyntheticSpec,
    TiffPairDataset,
    denormalize,
    generate_synthetic,
    load_pair,
    normalize,
    read_image,
    scan,
)


def test_normalize_endpoints():
    for dt, peak in ((np.uint8, 255), (np.uint16, 65535)):
        out = normalize(np.array([0, peak], dtype=dt))
        np.testing.assert_array_equal(out, [-1.0, 1.0])
    np.testing.assert_allclose(normalize(np.array([0.0, 0.5, 1.0])), [-1, 0, 1])
    with pytest.raises(DatasetError):
        normalize(np.array([1], dtype=np.int16))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), bits16=st.booleans())
def test_round_trip(seed, bits16):
    dt = np.uint16 if bits16 else np.uint8
    raw = np.random.default_rng(seed).integers(0, np.iinfo(dt).max + 1, size=(8, 8)).astype(dt)
    back = denormalize(normalize(raw), dt)
    assert np.abs(back.astype(np.int64) - raw.astype(np.int64)).max() <= 1


def test_denormalize_clamps():
    np.testing.assert_array_equal(denormalize(np.array([-3.0, 0.0, 3.0])), [0, 128, 255])


def _write_tree(tmp_path, names_low, names_high, shape=(8, 8), dtype=np.uint16):
    low, high = tmp_path / "wf", tmp_path / "gt"
    low.mkdir(), high.mkdir()
    rng = np.random.default_rng(0)
    for d, names in ((low, names_low), (high, names_high)):
        for n in names:
            tifffile.imwrite(d / n, rng.integers(0, 1000, size=shape).astype(dtype))
    return low, high


def test_scan_intersection_sorted(tmp_path):
    low, high = _write_tree(tmp_path, ["b.tif", "a.tif", "B.tif", "only_low.tif"], ["a.tif", "b.tif", "B.tif"])
    (low / "notes.txt").write_text("x")
    m = scan(low, high)
    assert m.filenames == ("B.tif", "a.tif", "b.tif")
    assert len(m) == 3 and m.image_size == (8, 8) and m.channels == 1


def test_scan_disjoint(tmp_path):
    low, high = _write_tree(tmp_path, ["a.tif"], ["b.tif"])
    with pytest.raises(DatasetError, match="no TIFF"):
        scan(low, high)


def test_scan_corrupt_names_file(tmp_path):
    low, high = _write_tree(tmp_path, ["a.tif", "c.tif"], ["a.tif", "c.tif"])
    (high / "c.tif").write_bytes(b"not a tiff")
    with pytest.raises(DatasetError, match="c.tif"):
        scan(low, high)


def test_scan_missing_dir(tmp_path):
    with pytest.raises(DatasetError):
        scan(tmp_path / "nope", tmp_path)


def test_load_pair_values(tmp_path):
    low, high = _write_tree(tmp_path, ["a.tif"], ["a.tif"])
    m = scan(low, high)
    lo, hi = load_pair(m, 0)
    assert lo.shape == (1, 1, 8, 8) and lo.dtype == torch.float32
    raw = tifffile.imread(high / "a.tif")
    np.testing.assert_allclose(hi[0, 0].numpy(), raw / 65535 * 2 - 1, atol=1e-6)
    with pytest.raises(IndexError):
        load_pair(m, 1)
    ds = TiffPairDataset(m)
    lo2, hi2 = ds.get_batch([0, 0])
    assert lo2.shape == (2, 1, 8, 8) and torch.equal(hi2[1], hi[0])


def test_read_image_rgb_planes(tmp_path):
    tifffile.imwrite(tmp_path / "c.tif", np.zeros((6, 6, 3), np.uint8))
    assert read_image(tmp_path / "c.tif").shape == (3, 6, 6)


def test_synthetic_deterministic_and_range():
    spec = SyntheticSpec(n_pairs=6, image_size=12, seed=4)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert torch.equal(a.low, b.low) and torch.equal(a.high, b.high)
    assert a.high.shape == (6, 1, 12, 12)
    assert float(a.high.max()) == pytest.approx(1.0) and float(a.high.min()) >= -1.0
    assert not torch.equal(a.high, generate_synthetic(SyntheticSpec(n_pairs=6, image_size=12, seed=5)).high)


def test_synthetic_blur():
    ds = generate_synthetic(SyntheticSpec(n_pairs=3, image_size=12, blur_radius=0.0))
    assert torch.equal(ds.low, ds.high)
    ds = generate_synthetic(SyntheticSpec(n_pairs=3, image_size=12, blur_radius=1.5))
    unit = (ds.high.double().numpy() + 1) / 2
    want = gaussian_filter(unit[:, 0], sigma=(0, 1.5, 1.5), mode="reflect") * 2 - 1
    np.testing.assert_allclose(ds.low[:, 0].numpy(), want, atol=1e-6)


def test_split_and_batches():
    ds = generate_synthetic(SyntheticSpec(n_pairs=10, image_size=8))
    tr, te = ds.split(7)
    assert (len(tr), len(te)) == (7, 3)
    assert torch.equal(te.high[0], ds.high[7])
    sizes = [h.shape[0] for _, h in ds.batches(4)]
    assert sizes == [4, 4, 2]
    assert ds.image_shape == (1, 8, 8)
