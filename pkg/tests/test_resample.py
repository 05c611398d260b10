from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from birescale.errors import ContractViolation, UnsupportedConfiguration
from birescale.resample import KernelSpec, axis_weights, bilnn_cycle, cubic, resample

from oracles import brute_resample_axis, coverage_downscale, cubic_kernel

GOLDEN = Path(__file__).parent / "data" / "resample_golden.npz"
CASES = [(32, 32, 16, 16), (30, 30, 13, 17), (12, 12, 29, 31), (40, 40, 27, 27), (24, 36, 10, 9)]


def interior(n_in, n_out, support):
    """Output indices whose kernel footprint never leaves the input."""
    scale = n_in / n_out
    stretch = max(scale, 1.0)
    c = (np.arange(n_out) + 0.5) * scale - 0.5
    return np.nonzero((c - support * stretch > -0.5) & (c + support * stretch < n_in - 0.5))[0]


@pytest.mark.parametrize("n", range(len(CASES)))
@pytest.mark.parametrize("kind,support", [("bicubic", 2.0), ("bilinear", 1.0)])
def test_matches_pillow_interior(n, kind, support):
    data = np.load(GOLDEN)
    h, w, oh, ow = CASES[n]
    ours = resample(data[f"input{n}"].astype(np.float64), oh, ow, kind)
    rows, cols = interior(h, oh, support), interior(w, ow, support)
    assert len(rows) and len(cols)
    ref = data[f"{kind}{n}"][np.ix_(rows, cols)]
    np.testing.assert_allclose(ours[np.ix_(rows, cols)], ref, atol=2e-5)


def test_cubic_kernel_values():
    assert cubic(0.0) == 1.0
    assert cubic(0.5) == 0.5625
    assert cubic(1.0) == 0.0
    assert cubic(2.0) == 0.0
    assert cubic(1.5) == -0.0625


@pytest.mark.parametrize("n_in,n_out", [(7, 3), (3, 7), (16, 16 * 3), (20, 9), (5, 5 + 1), (9, 2)])
@pytest.mark.parametrize("kind", ["bicubic", "bilinear"])
@pytest.mark.parametrize("antialias", [True, False])
def test_matches_brute_force_axis(n_in, n_out, kind, antialias):
    rng = np.random.default_rng(n_in * 31 + n_out)
    signal = rng.random(n_in)
    kernel, support = (cubic_kernel, 2.0) if kind == "bicubic" else (lambda t: max(0.0, 1 - abs(t)), 1.0)
    ref = brute_resample_axis(signal, n_out, kernel, support, antialias)
    ours = axis_weights(n_in, n_out, KernelSpec(kind, antialias)) @ signal
    np.testing.assert_allclose(ours, ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("kind", ["nearest", "bilinear", "bicubic", "area"])
def test_same_size_is_exact_copy(kind):
    img = np.random.default_rng(0).random((3, 9, 7)).astype(np.float32)
    out = resample(img, 9, 7, kind)
    assert out.tobytes() == img.tobytes()
    assert out is not img


def test_area_two_to_one():
    img = np.array([[0.0, 1.0], [1.0, 1.0]])
    assert resample(img, 1, 1, "area")[0, 0] == 0.75


def test_area_checkerboard_is_flat():
    board = (np.indices((8, 8)).sum(axis=0) % 2).astype(np.float64)
    np.testing.assert_array_equal(resample(board, 4, 4, "area"), np.full((4, 4), 0.5))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.sampled_from(["nearest", "bilinear", "bicubic", "area"]),
       st.booleans())
def test_rows_partition_unity(n_in, n_out, kind, antialias):
    w = axis_weights(n_in, n_out, KernelSpec(kind, antialias))
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 20), st.integers(1, 20),
       st.sampled_from(["nearest", "bilinear", "bicubic", "area"]), st.floats(0, 1))
def test_constant_preserved(h, w, oh, ow, kind, value):
    img = np.full((2, h, w), value)
    np.testing.assert_allclose(resample(img, oh, ow, kind), value, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(0, 1000))
def test_area_matches_coverage_oracle(h, w, oh, ow, seed):
    img = np.random.default_rng(seed).random((2, h, w))
    np.testing.assert_allclose(resample(img, oh, ow, "area"), coverage_downscale(img, oh, ow), atol=1e-12)


def test_nearest_upscale_replicates_blocks():
    img = np.arange(6.0).reshape(2, 3)
    out = resample(img, 4, 6, "nearest")
    np.testing.assert_array_equal(out, np.kron(img, np.ones((2, 2))))


def test_bicubic_downscale_antialiases():
    # a one-pixel checker averages out instead of aliasing into stripes
    board = (np.indices((32, 32)).sum(axis=0) % 2).astype(np.float64)
    aa = resample(board, 8, 8, KernelSpec("bicubic", antialias=True))
    assert np.ptp(aa[2:-2, 2:-2]) < 1e-9  # borders see clamped taps
    # at x3 each output centre lands on one pixel, so the plain kernel aliases
    odd = board[:30, :30]
    assert np.ptp(resample(odd, 10, 10, KernelSpec("bicubic", antialias=False))) > 0.9
    assert np.ptp(resample(odd, 10, 10, KernelSpec("bicubic", antialias=True))) < 0.2


@pytest.mark.parametrize("factor", [2, 3, 4])
def test_bilnn_idempotent(factor):
    rng = np.random.default_rng(factor)
    img = rng.integers(0, 256, size=(3, 12 * factor, 8 * factor)) / 255.0
    first = bilnn_cycle(img, 12, 8)
    second = bilnn_cycle(first, 12, 8)
    assert first.tobytes() == second.tobytes()


def test_bilnn_rejects_fractional_ratio():
    with pytest.raises(UnsupportedConfiguration):
        bilnn_cycle(np.zeros((3, 10, 10)), 3, 5)


@pytest.mark.parametrize("size", [(0, 4), (4, -1), (2.5, 3)])
def test_invalid_sizes(size):
    with pytest.raises(ContractViolation):
        resample(np.zeros((4, 4)), *size)


def test_unknown_kernel():
    with pytest.raises(ContractViolation, match="unknown kernel"):
        KernelSpec("lanczos")


def test_dtype_follows_input():
    assert resample(np.zeros((4, 4), np.float32), 2, 2).dtype == np.float32
    assert resample(np.zeros((4, 4), np.uint8), 2, 2).dtype == np.float64
