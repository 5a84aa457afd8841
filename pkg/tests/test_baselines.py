import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unfold_pansharp import baselines as B
from unfold_pansharp.errors import ContractViolation, DegenerateInputError
from unfold_pansharp.imaging import bicubic_resample

RNG = np.random.default_rng(61)


def pair(c=3, h=4, s=2, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.1, 1, (c, h, h)), rng.uniform(0.1, 1, (1, h * s, h * s))


def test_bicubic_constant():
    Y = np.full((3, 4, 4), 0.25)
    assert np.allclose(B.fuse_baseline("bicubic", Y, np.zeros((1, 8, 8)), 2), 0.25)


def test_ihs_zero_detail_and_rank_one():
    Y, P = pair()
    up = bicubic_resample(Y, 2, "up")
    assert np.allclose(B.fuse_baseline("ihs", Y, up.mean(axis=0, keepdims=True), 2), up)
    d = B.fuse_baseline("ihs", Y, P, 2) - up
    assert np.allclose(d, d[:1])


def test_brovey_ratios_and_scale():
    Y, P = pair()
    up = bicubic_resample(Y, 2, "up")
    out = B.fuse_baseline("brovey", Y, P, 2)
    assert np.allclose(out[0] / out[1], up[0] / up[1])


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100))
def test_brovey_scale_equivariant(c):
    Y, P = pair(seed=1)
    assert np.allclose(B.fuse_baseline("brovey", c * Y, c * P, 2), c * B.fuse_baseline("brovey", Y, P, 2), rtol=1e-12)


def test_degenerate_and_contract_errors():
    with pytest.raises(DegenerateInputError):
        B.fuse_baseline("brovey", np.zeros((2, 4, 4)), np.ones((1, 8, 8)), 2)
    with pytest.raises(DegenerateInputError):
        B.fuse_baseline("ihs", np.zeros((2, 4, 4)), np.ones((1, 8, 8)), 2)
    with pytest.raises(ContractViolation):
        B.fuse_baseline("pca", *pair(), 2)
    with pytest.raises(ContractViolation):
        B.fuse_baseline("ihs", np.ones((2, 4, 4)), np.ones((1, 9, 9)), 2)
