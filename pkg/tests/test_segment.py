import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vtire.errors import ConfigError, DataError, DimensionError
from vtire.nn import Layer, grad_check
from vtire.segment import (SegConfig, SegModel, crack_detected, crack_seg_data, evaluate_seg,
                           object_search_protocol, object_seg_data, predict_masks,
                           probe_resolution, search_objects, seg_forward, seg_loss, seg_metrics,
                           train_seg, valid_region)
from vtire.synth import FrameGeometry, empty_imprint, gen_crack, gen_object_imprint

G = FrameGeometry()


@pytest.fixture(scope="module")
def object_model():
    X, M = object_seg_data(16, 10)
    return train_seg(X, M, SegConfig(epochs=12, seed=0)).model


@pytest.fixture(scope="module")
def crack_model():
    X, M = crack_seg_data(80, 10)
    return train_seg(X, M, SegConfig(mode="crack", epochs=12, seed=0)).model


# -- metrics -------------------------------------------------------------------

def test_metrics_examples():
    a = np.zeros((8, 8), bool)
    a[:4, :4] = True
    assert seg_metrics(a, a) == {"pixel_acc": 1.0, "iou": 1.0}
    b = np.zeros((8, 8), bool)
    b[4:, 4:] = True
    assert seg_metrics(a, b)["iou"] == 0.0
    c = np.zeros((8, 8), bool)
    c[:4, 2:6] = True  # half of a overlapped
    assert seg_metrics(a, c)["iou"] == pytest.approx(1 / 3)
    empty = np.zeros((8, 8), bool)
    assert seg_metrics(empty, empty)["iou"] == 1.0


def test_metrics_respect_valid_region():
    pred = np.zeros((4, 4), bool)
    true = np.zeros((4, 4), bool)
    true[0, 0] = True
    valid = np.ones((4, 4), bool)
    valid[0, 0] = False
    assert seg_metrics(pred, true, valid) == {"pixel_acc": 1.0, "iou": 1.0}
    with pytest.raises(DataError):
        seg_metrics(pred, np.zeros((3, 3), bool))


@given(arrays(bool, (6, 6)), arrays(bool, (6, 6)))
@settings(max_examples=50)
def test_iou_symmetric(p, t):
    assert seg_metrics(p, t)["iou"] == seg_metrics(t, p)["iou"]
    assert 0 <= seg_metrics(p, t)["iou"] <= 1


# -- model ----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        SegConfig(mode="panoptic")
    with pytest.raises(ConfigError):
        SegConfig(skips=(3,))
    with pytest.raises(ConfigError):
        SegConfig(pos_weight=0)


@pytest.mark.parametrize("skips", [(2,), (1, 2)])
def test_output_shape_and_probabilities(skips, rng):
    model = SegModel(SegConfig(skips=skips))
    p = seg_forward(rng.integers(0, 255, (3, 88, 88)).astype(np.uint8), model)
    assert p.shape == (3, 2, 88, 88)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-5)
    with pytest.raises(DimensionError):
        model.forward(np.zeros((1, 90, 90), np.float32))


def test_zero_weights_give_constant_map(rng):
    model = SegModel(SegConfig(precision="double"))
    for _, owner, key in model.named_parameters():
        owner.params[key] = np.zeros_like(owner.params[key])
    model.sublayers["score3"].params["b"] = np.array([0.3, -0.2])
    p = seg_forward(rng.random((2, 88, 88)), model)
    assert np.ptp(p[:, 1]) < 1e-12


class _Wrapped(Layer):
    def __init__(self, model):
        super().__init__()
        self.sublayers["m"] = model

    def forward(self, x):
        return self.sublayers["m"].forward(x)

    def backward(self, dy):
        return self.sublayers["m"].backward(dy)


@pytest.mark.parametrize("skips", [(2,), (1, 2)])
def test_fcn_gradient_check_16x16(skips, rng):
    model = SegModel(SegConfig(skips=skips, precision="double", widths=(4, 4, 4)))
    for _, owner, key in model.named_parameters():
        owner.params[key] = owner.params[key] + 0.05 * rng.standard_normal(owner.params[key].shape)
    masks = rng.random((2, 16, 16)) < 0.3
    rep = grad_check(_Wrapped(model), rng.random((2, 16, 16)), eps=1e-6, max_coords=200,
                     loss_fn=lambda out: seg_loss(out, masks, np.ones((16, 16), bool)))
    assert rep.passed, rep


def test_seg_loss_gradient_and_weights(rng):
    logits = rng.standard_normal((2, 2, 4, 4))
    masks = rng.random((2, 4, 4)) < 0.5
    valid = rng.random((4, 4)) < 0.7
    loss, grad = seg_loss(logits, masks, valid, pos_weight=2.0)
    num = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        for sgn in (1, -1):
            l2 = logits.copy()
            l2[idx] += sgn * 1e-6
            num[idx] += sgn * seg_loss(l2, masks, valid, 2.0)[0] / 2e-6
    assert np.max(np.abs(num - grad)) < 1e-8
    assert np.all(grad[:, :, ~valid] == 0)
    with pytest.raises(DataError):
        seg_loss(logits, masks[:, :3], valid)


def test_crack_loss_ignores_pixels_outside_disk(rng):
    model = SegModel(SegConfig(mode="crack"))
    c = gen_crack(0.4, 1)
    img = c["image"][None]
    valid = valid_region(model, img.shape[1:])
    base = seg_loss(model.forward(model.prepare(img)), c["mask"][None], valid)[0]
    scribbled = img.copy()
    outside = ~G.disk_mask()
    scribbled[0][outside] = rng.integers(0, 256, outside.sum())
    again = seg_loss(model.forward(model.prepare(scribbled)), c["mask"][None], valid)[0]
    assert again == base  # byte-exact


def test_training_is_deterministic():
    X, M = object_seg_data(2, 3, n_empty=2)
    cfg = SegConfig(epochs=2, precision="double")
    assert train_seg(X, M, cfg).history == train_seg(X, M, cfg).history


def test_misaligned_data_rejected():
    with pytest.raises(DataError):
        train_seg(np.zeros((2, 88, 88)), np.zeros((3, 88, 88), bool), SegConfig(epochs=1))


def test_all_background_is_trivial():
    X = np.stack([empty_imprint(i)["image"] for i in range(8)])
    M = np.zeros(X.shape, bool)
    res = train_seg(X, M, SegConfig(epochs=3))
    assert res.history[-1]["pixel_acc"] == 1.0 and res.history[-1]["iou"] == 1.0


def test_checkpoint_roundtrip(tmp_path, rng):
    model = SegModel(SegConfig(mode="crack", skips=(2,)))
    x = rng.integers(0, 255, (1, 88, 88)).astype(np.uint8)
    again = SegModel.load(model.save(tmp_path / "seg.vtck"))
    assert again.config == model.config
    assert np.array_equal(seg_forward(x, again), seg_forward(x, model))


# -- object search ------------------------------------------------------------------

def test_empty_frames_do_not_fire(object_model):
    frames = np.stack([empty_imprint(100 + i)["image"] for i in range(5)])
    assert not any(d.fired for d in search_objects(frames, object_model, threshold=40))


def test_threshold_zero_always_fires(object_model):
    frames = np.stack([empty_imprint(200 + i)["image"] for i in range(3)])
    assert all(d.fired for d in search_objects(frames, object_model, threshold=0))


def test_nut_imprint_detected_with_good_mask(object_model):
    o = gen_object_imprint("nut", 777)
    (det,) = search_objects(o["image"], object_model, threshold=40)
    assert det.fired and seg_metrics(det.mask, o["mask"])["iou"] >= 0.5


def test_search_protocol_report(object_model):
    rep = object_search_protocol(object_model, n_trials=5, frames_per_trial=4, seed=1)
    assert rep["trials"] == 5 and len(rep["per_trial"]) == 5
    assert rep["successes"] == sum(t["success"] for t in rep["per_trial"])


def test_object_eval_metrics(object_model):
    X, M = object_seg_data(4, 99, n_empty=2)
    m = evaluate_seg(object_model, X, M)
    assert m["pixel_acc"] > 0.95


# -- crack probe ----------------------------------------------------------------------

def test_wide_crack_detected(crack_model):
    c = gen_crack(1.0, 5)  # 10 px
    pred = predict_masks(crack_model, c["image"][None])[0]
    assert crack_detected(pred, c["mask"])


def test_sub_floor_width_not_detected(crack_model):
    rep = probe_resolution(crack_model, widths_mm=(0.01,), n_seeds=10)
    assert rep["smallest_detected_mm"] is None and not rep["per_width"][0]["detected"]


def test_probe_scan_is_monotone(crack_model):
    rep = probe_resolution(crack_model, widths_mm=(1.0, 0.6, 0.01, 0.005), n_seeds=4, min_hits=3)
    flags = [w["detected"] for w in rep["per_width"]]
    # scanning stops at the first miss, so detections form a prefix
    assert flags == sorted(flags, reverse=True) and flags[-1] is False
    assert rep["smallest_detected_mm"] == 0.6


def test_probe_rejects_bad_widths(crack_model):
    with pytest.raises(ValueError):
        probe_resolution(crack_model, widths_mm=(0.2, 0.3))
    with pytest.raises(ValueError):
        probe_resolution(crack_model, widths_mm=(0.3, -0.1))
