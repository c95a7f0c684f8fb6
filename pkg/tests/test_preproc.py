import numpy as np
import pytest

from oodtown import preproc
from oodtown.errors import ArgumentError
from oodtown.rng import sub_rng


def test_size_menu_frozen():
    assert preproc.SIZES == ((30, 40), (60, 80), (90, 120), (120, 160))


def test_config_validation():
    with pytest.raises(ArgumentError):
        preproc.PreprocConfig(size=(50, 50))
    with pytest.raises(ArgumentError):
        preproc.PreprocConfig(flows=17)
    with pytest.raises(ArgumentError):
        preproc.PreprocConfig(flows=0)
    with pytest.raises(ArgumentError):
        preproc.PreprocConfig(interp="cubic")


# ---------------------------------------------------------------------------
# resize

def test_bilinear_center_of_2x2():
    img = np.array([[0.0, 2.0], [2.0, 4.0]], dtype=np.float32)
    out = preproc.resize(img, (1, 1), "bilinear")
    assert np.isclose(out[0, 0], 2.0)


def test_nearest_preserves_values():
    img = np.arange(16, dtype=np.float32).reshape(4, 4)
    out = preproc.resize(img, (2, 2), "nearest")
    assert set(out.reshape(-1)).issubset(set(img.reshape(-1)))


def test_identity_resize():
    img = sub_rng(0, "rz").random((6, 8)).astype(np.float32)
    for interp in preproc.INTERPS:
        assert np.allclose(preproc.resize(img, (6, 8), interp), img, atol=1e-6)


def test_upscale_constant_image():
    img = np.full((5, 5), 3.25, dtype=np.float32)
    out = preproc.resize(img, (9, 13), "bilinear")
    assert np.allclose(out, 3.25, atol=1e-6)


def test_flow_field_resize_rescales_vectors():
    """Halving each axis must halve the displacement components."""
    f = np.empty((8, 12, 2), dtype=np.float32)
    f[..., 0] = 4.0   # horizontal px/frame
    f[..., 1] = 2.0
    out = preproc.resize(f, (4, 6), "bilinear")
    assert out.shape == (4, 6, 2)
    assert np.allclose(out[..., 0], 2.0, atol=1e-5)
    assert np.allclose(out[..., 1], 1.0, atol=1e-5)


def test_flow_field_resize_anisotropic():
    f = np.ones((10, 10, 2), dtype=np.float32)
    out = preproc.resize(f, (5, 20), "nearest")
    assert np.allclose(out[..., 0], 2.0)   # width doubled
    assert np.allclose(out[..., 1], 0.5)   # height halved


def test_rgb_resize_keeps_channels():
    img = sub_rng(1, "rgb").random((8, 8, 3)).astype(np.float32)
    out = preproc.resize(img, (4, 4), "bilinear")
    assert out.shape == (4, 4, 3)


# ---------------------------------------------------------------------------
# stacking

def test_build_stack_normalizes_to_unit():
    cfg = preproc.PreprocConfig(size=(30, 40), flows=2)
    f = np.zeros((30, 40, 2), dtype=np.float32)
    f[..., 0] = preproc.V_MAX
    stack = preproc.build_stack([f, f], cfg)
    assert stack.shape == (4, 30, 40)
    assert np.allclose(stack[0], 1.0)
    assert np.allclose(stack[1], 0.0)


def test_build_stack_resizes_native_fields():
    cfg = preproc.PreprocConfig(size=(30, 40), flows=1)
    f = np.full((60, 80, 2), 4.0, dtype=np.float32)
    stack = preproc.build_stack([f], cfg)
    assert stack.shape == (2, 30, 40)
    # field halved in both axes, then scaled by 1 / V_MAX
    assert np.allclose(stack, 2.0 / preproc.V_MAX, atol=1e-5)


def test_build_stack_clips_extremes():
    cfg = preproc.PreprocConfig(size=(30, 40), flows=1)
    f = np.full((30, 40, 2), 100.0, dtype=np.float32)
    stack = preproc.build_stack([f], cfg)
    assert float(stack.max()) <= 1.0


def test_build_stack_wrong_count():
    cfg = preproc.PreprocConfig(size=(30, 40), flows=3)
    f = np.zeros((30, 40, 2), dtype=np.float32)
    with pytest.raises(ArgumentError):
        preproc.build_stack([f, f], cfg)


def test_stack_dims_example():
    cfg = preproc.PreprocConfig(size=(60, 80), flows=5)
    fields = [np.zeros((60, 80, 2), dtype=np.float32)] * 5
    assert preproc.build_stack(fields, cfg).shape == (10, 60, 80)


# ---------------------------------------------------------------------------
# window labels

def test_label_window_any():
    assert preproc.label_window([False, False, True]) is True
    assert preproc.label_window([False, False, False]) is False


def test_window_dataset_counts_and_labels():
    cfg = preproc.PreprocConfig(size=(30, 40), flows=2)
    flows = [np.zeros((30, 40, 2), dtype=np.float32) for _ in range(5)]
    labels = [False, False, True, False, False, False]
    stacks, wl = preproc.window_dataset(flows, labels, cfg)
    # window i covers flows [i, i+2) and frames [i, i+2]
    assert stacks.shape == (4, 4, 30, 40)
    assert list(wl) == [True, True, True, False]


def test_window_dataset_label_count_checked():
    cfg = preproc.PreprocConfig(size=(30, 40), flows=2)
    flows = [np.zeros((30, 40, 2), dtype=np.float32)] * 3
    with pytest.raises(ArgumentError):
        preproc.window_dataset(flows, [False] * 3, cfg)


def test_window_dataset_short_video_empty():
    cfg = preproc.PreprocConfig(size=(30, 40), flows=5)
    flows = [np.zeros((30, 40, 2), dtype=np.float32)] * 3
    stacks, wl = preproc.window_dataset(flows, [False] * 4, cfg)
    assert stacks.shape == (0, 10, 30, 40)
    assert wl.shape == (0,)
