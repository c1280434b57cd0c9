import math

import numpy as np
import pytest
import torch

from srddpm.posenc import encode


def test_zero_pattern():
    for d in (2, 16, 256):
        e = encode(0, d)
        assert e.shape == (1, d)
        assert torch.equal(e[0, : d // 2], torch.zeros(d // 2))
        assert torch.equal(e[0, d // 2 :], torch.ones(d // 2))


def test_small_hand_case():
    e = encode(torch.tensor([1]), 4, dtype=torch.float64)[0]
    want = [math.sin(1), math.sin(0.01), math.cos(1), math.cos(0.01)]
    np.testing.assert_allclose(e.numpy(), want, rtol=1e-15)


def test_matches_numpy_oracle():
    t = np.arange(0, 2000, 37)
    d = 64
    k = np.arange(d // 2)
    arg = t[:, None] / 10000.0 ** (2 * k / d)
    want = np.concatenate([np.sin(arg), np.cos(arg)], 1)
    got = encode(torch.as_tensor(t), d, dtype=torch.float64).numpy()
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_column_input_and_dtype():
    e = encode(torch.arange(5).reshape(5, 1), 8)
    assert e.shape == (5, 8) and e.dtype == torch.float32


def test_rows_distinct_first_hundred():
    e = encode(torch.arange(100), 256)
    d = torch.cdist(e, e)
    d.fill_diagonal_(1.0)
    assert d.min() > 1e-3


@pytest.mark.parametrize("d", [0, 1, 3, 255])
def test_bad_dimension(d):
    with pytest.raises(ValueError):
        encode(1, d)


def test_negative_timestep():
    with pytest.raises(ValueError):
        encode(torch.tensor([3, -1]), 8)
