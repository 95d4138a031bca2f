import math

import numpy as np
import numpy.testing as npt
import pytest

from conftest import fd_check_params, numeric_grad_inplace
from mcit import autograd as ag
from mcit import heads
from mcit.autograd import Tensor
from mcit.errors import ContractError
from mcit.geometry import BBox


def make_head(dim=16, seed=0):
    return heads.CenterHead(np.random.default_rng(seed), dim)


def test_head_output_shapes_and_range():
    head = make_head()
    maps = heads.head_forward(head,
                              np.random.default_rng(1).normal(size=(16, 8, 8)))
    assert maps.S.shape == (1, 8, 8)
    assert maps.Bm.shape == (2, 8, 8)
    assert maps.O.shape == (2, 8, 8)
    for m in (maps.S, maps.Bm, maps.O):
        assert np.all(m > 0) and np.all(m < 1)


def test_head_deterministic():
    head = make_head()
    f = np.random.default_rng(2).normal(size=(16, 4, 4))
    a = heads.head_forward(head, f)
    b = heads.head_forward(head, f)
    assert np.array_equal(a.S, b.S)


def test_score_bias_starts_low():
    head = make_head()
    maps = heads.head_forward(head, np.zeros((16, 4, 4)))
    assert np.all(maps.S < 0.5)


def test_decode_hand_case():
    S = np.zeros((1, 8, 8))
    S[0, 3, 3] = 0.9
    Bm = np.full((2, 8, 8), 0.25)
    O = np.full((2, 8, 8), 0.5)
    box, score = heads.decode_box(heads.HeadMaps(S, Bm, O))
    npt.assert_allclose((box.cx, box.cy), (0.4375, 0.4375), atol=1e-12)
    npt.assert_allclose(box.as_array(), [0.3125, 0.3125, 0.5625, 0.5625],
                        atol=1e-12)
    assert score == 0.9


def test_decode_zero_maps_degenerate_box():
    maps = heads.HeadMaps(np.zeros((1, 4, 4)), np.zeros((2, 4, 4)),
                          np.zeros((2, 4, 4)))
    box, score = heads.decode_box(maps)
    assert box.as_array().tolist() == [0.0, 0.0, 0.0, 0.0]
    assert score == 0.0


def test_decode_score_scale_invariance_and_tie_break():
    g = np.random.default_rng(3)
    S = g.uniform(0.1, 0.9, size=(1, 6, 6))
    Bm = g.uniform(0.1, 0.5, size=(2, 6, 6))
    O = g.uniform(0, 1, size=(2, 6, 6))
    b1, _ = heads.decode_box(heads.HeadMaps(S, Bm, O))
    b2, _ = heads.decode_box(heads.HeadMaps(0.5 * S, Bm, O))
    npt.assert_allclose(b1.as_array(), b2.as_array(), atol=1e-12)
    # row-major first occurrence on ties
    S2 = np.zeros((1, 4, 4))
    S2[0, 1, 2] = 1.0
    S2[0, 2, 1] = 1.0
    box, _ = heads.decode_box(heads.HeadMaps(S2, Bm[:, :4, :4], O[:, :4, :4]))
    npt.assert_allclose(box.cx, (2 + O[0, 1, 2]) / 4, atol=1e-12)


def test_gaussian_target_peak_symmetry_and_mass():
    gt = BBox(0.375, 0.375, 0.625, 0.625)   # centered square
    g = heads.gaussian_target(gt, 8, 8)
    i0, j0 = heads.center_cell(gt, 8, 8)
    assert g[i0, j0] == 1.0
    npt.assert_allclose(g, g[:, ::-1], atol=1e-12)   # mirror symmetry
    npt.assert_allclose(g, g[::-1, :], atol=1e-12)
    assert g.sum() > 1.0
    assert np.all(g >= 0) and np.all(g <= 1.0)


def test_gaussian_target_off_center_still_peaks_at_one():
    g = heads.gaussian_target(BBox(0.11, 0.6, 0.3, 0.88), 8, 8)
    assert g.max() == 1.0
    assert (g == 1.0).sum() == 1


def test_gaussian_target_boundary_center_ties_both_cells():
    # center y exactly on a cell edge: both adjacent cells peak at 1
    g = heads.gaussian_target(BBox(0.1, 0.6, 0.3, 0.9), 8, 8)
    assert (g == 1.0).sum() == 2


def test_encode_decode_round_trip_within_cell():
    hm = wm = 8
    gt = BBox(0.21, 0.32, 0.55, 0.7)
    S = heads.gaussian_target(gt, hm, wm)[None]
    i0, j0 = heads.center_cell(gt, hm, wm)
    Bm = np.zeros((2, hm, wm))
    O = np.zeros((2, hm, wm))
    Bm[0, i0, j0] = gt.w
    Bm[1, i0, j0] = gt.h
    O[0, i0, j0] = gt.cx * wm - j0
    O[1, i0, j0] = gt.cy * hm - i0
    box, _ = heads.decode_box(heads.HeadMaps(S, Bm, O))
    npt.assert_allclose(box.as_array(), gt.as_array(), atol=1.0 / hm)
    npt.assert_allclose(box.as_array(), gt.as_array(), atol=1e-9)


def test_focal_perfect_prediction_is_zero():
    t = np.zeros((4, 4))
    t[1, 1] = 1.0
    p = t.copy()
    assert heads.focal_loss(p, t) < 1e-11


def test_focal_hand_value():
    t = np.zeros((4, 4))
    t[2, 2] = 1.0
    p = np.zeros((4, 4))
    p[2, 2] = 0.5
    npt.assert_allclose(heads.focal_loss(p, t), 0.25 * math.log(2),
                        atol=1e-12)


def test_focal_nonnegative_random():
    g = np.random.default_rng(4)
    for _ in range(10):
        t = heads.gaussian_target(BBox(0.3, 0.3, 0.6, 0.6), 8, 8)
        p = g.uniform(0, 1, size=(8, 8))
        assert heads.focal_loss(p, t) >= 0.0


def test_focal_shape_mismatch_raises():
    with pytest.raises(ContractError):
        heads.focal_loss(np.zeros((2, 2)), np.zeros((3, 3)))


def test_giou_loss_hand_values():
    assert heads.giou_loss(BBox(0, 0, 1, 1), BBox(0, 0, 1, 1)) == 0.0
    assert heads.giou_loss(BBox(0, 0, 1, 1), BBox(1, 1, 2, 2)) == 1.5
    npt.assert_allclose(heads.giou_loss(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)),
                        1 + 5 / 63, atol=1e-13)


def test_giou_loss_range_and_symmetry():
    g = np.random.default_rng(5)
    for _ in range(20):
        a = BBox.from_xywh(*g.uniform(0, 1, 2), *g.uniform(0.05, 0.5, 2))
        b = BBox.from_xywh(*g.uniform(0, 1, 2), *g.uniform(0.05, 0.5, 2))
        v = heads.giou_loss(a, b)
        assert 0.0 <= v < 2.0
        assert v == heads.giou_loss(b, a)


def test_l1_loss_mean_of_corner_diffs():
    a = BBox(0, 0, 1, 1)
    b = BBox(0.1, 0, 1, 0.7)
    npt.assert_allclose(heads.l1_loss(a, b), (0.1 + 0.3) / 4, atol=1e-12)
    assert heads.l1_loss(a, a) == 0.0


def test_total_loss_hand_values():
    assert heads.total_loss([(0.0, 0.0, 0.0)]) == 0.0
    assert heads.total_loss([(0.1, 0.02, 0.3)] * 2) == 1.6
    assert heads.total_loss([(1.0, 0.0, 0.0)], weights=(2, 5, 2)) == 2.0


def test_total_loss_rejects_empty():
    with pytest.raises(ContractError):
        heads.total_loss([])


def test_giou_and_l1_gradients_match_fd():
    g = np.random.default_rng(6)
    pred = g.uniform(0.1, 0.4, size=(3, 4))
    pred[:, 2:] += 0.3   # ensure x2>x1, y2>y1
    gt = pred + g.uniform(-0.05, 0.05, size=(3, 4))
    gt[:, 2:] = np.maximum(gt[:, 2:], gt[:, :2] + 0.05)
    for fn in (heads.giou_loss, heads.l1_loss):
        t = Tensor(pred.copy(), requires_grad=True)
        fn(t, gt).backward()

        def value():
            return fn(pred, gt)

        num = numeric_grad_inplace(pred, value)
        npt.assert_allclose(t.grad, num, atol=1e-7, rtol=1e-4)


def test_focal_gradient_matches_fd():
    t_map = np.zeros((4, 4))
    t_map[1, 2] = 1.0
    p = np.random.default_rng(7).uniform(0.1, 0.9, size=(4, 4))
    pt = Tensor(p.copy(), requires_grad=True)
    heads.focal_loss(pt, t_map).backward()

    def value():
        with ag.no_grad():
            return heads.focal_loss(p, t_map)

    npt.assert_allclose(pt.grad, numeric_grad_inplace(p, value),
                        atol=1e-7, rtol=1e-4)


def test_detection_losses_end_to_end_gradients():
    head = make_head(dim=8, seed=8)
    feats = Tensor(np.random.default_rng(9).normal(size=(2, 4, 4, 8)))
    gts = np.array([[0.2, 0.2, 0.6, 0.7], [0.4, 0.1, 0.9, 0.5]])

    def loss():
        cls, l1, gi = heads.detection_losses(head(feats), gts)
        return heads.total_loss([(cls, l1, gi)])

    fd_check_params(head, loss, atol=1e-6, rtol=1e-3, eps=1e-5)


def test_detection_losses_values_are_finite_positive():
    head = make_head(dim=8, seed=10)
    feats = Tensor(np.random.default_rng(11).normal(size=(1, 4, 4, 8)))
    cls, l1, gi = heads.detection_losses(head(feats),
                                         np.array([[0.3, 0.3, 0.7, 0.7]]))
    for v in (cls, l1, gi):
        assert np.isfinite(v.item()) and v.item() > 0
