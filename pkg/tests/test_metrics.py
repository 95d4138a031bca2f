import numpy as np
import numpy.testing as npt
import pytest

from mcit import metrics as mx
from mcit.errors import ContractError
from mcit.geometry import BBox, iou
from mcit.synth import SynthConfig, generate_sequence


def test_iou_hand_cases():
    a = BBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(5, 5, 6, 6)) == 0.0
    npt.assert_allclose(iou(a, BBox(1, 1, 3, 3)), 1 / 7, atol=1e-15)


def test_success_auc_all_ones():
    npt.assert_allclose(mx.success_auc([1.0] * 7), 20 / 21, atol=1e-12)


def test_success_auc_all_zero():
    assert mx.success_auc([0.0] * 5) == 0.0


def test_success_auc_single_half():
    npt.assert_allclose(mx.success_auc([0.5]), 10 / 21, atol=1e-12)


def test_success_auc_monotone():
    rng = np.random.default_rng(0)
    for _ in range(20):
        base = rng.uniform(0, 1, size=12)
        lifted = np.clip(base + rng.uniform(0, 0.2, size=12), 0, 1)
        assert mx.success_auc(lifted) >= mx.success_auc(base)


def test_success_auc_empty_rejected():
    with pytest.raises(ContractError):
        mx.success_auc([])


def test_ao_sr_hand_cases():
    npt.assert_allclose(mx.ao_sr([1.0, 1.0]), (1.0, 1.0, 1.0))
    npt.assert_allclose(mx.ao_sr([1.0, 0.0]), (0.5, 0.5, 0.5))
    npt.assert_allclose(mx.ao_sr([0.6, 0.6, 0.6]), (0.6, 1.0, 0.0))


def test_precision_perfect_and_hopeless():
    gt = [BBox.from_xywh(10, 10, 20, 20) for _ in range(4)]
    centers = [[b.cx, b.cy] for b in gt]
    p, pn = mx.precision_metrics(centers, gt)
    assert p == 1.0
    assert pn == 1.0
    far = [[1000.0, 1000.0]] * 4
    p, pn = mx.precision_metrics(far, gt)
    assert p == 0.0
    assert pn == 0.0


def test_precision_boundary_inclusive():
    gt = [BBox.from_xywh(0, 0, 10, 10)]
    center = [[gt[0].cx + 20.0, gt[0].cy]]    # exactly 20 px off
    p, _ = mx.precision_metrics(center, gt)
    assert p == 1.0
    just_out = [[gt[0].cx + 20.0001, gt[0].cy]]
    p, _ = mx.precision_metrics(just_out, gt)
    assert p == 0.0


def test_norm_precision_normalizes_per_axis():
    # error of half the box width with tau max 0.5: the <= comparison
    # succeeds only at the final threshold for a pure-x offset
    gt = [BBox.from_xywh(0, 0, 40, 10)]
    center = [[gt[0].cx + 20.0, gt[0].cy]]    # dx/w = 0.5, dy/h = 0
    _, pn = mx.precision_metrics(center, gt)
    npt.assert_allclose(pn, 1 / 51, atol=1e-12)


def test_oracle_eval():
    seqs = [generate_sequence(SynthConfig(length=10, image_size=64), s)
            for s in range(3)]
    report = mx.run_one_pass_eval(lambda seq: seq.gt[1:], seqs)
    npt.assert_allclose(report.auc, 20 / 21, atol=1e-12)
    npt.assert_allclose(report.ao, 1.0, atol=1e-15)
    npt.assert_allclose(report.sr_050, 1.0)
    npt.assert_allclose(report.precision, 1.0)
    assert report.n_sequences == 3


def test_constant_box_tracker_imperfect():
    seqs = [generate_sequence(SynthConfig(length=30, image_size=64), 1)]
    report = mx.run_one_pass_eval(
        lambda seq: [seq.gt[0]] * (len(seq.gt) - 1), seqs)
    assert report.ao < 1.0


def test_permutation_invariance():
    seqs = [generate_sequence(SynthConfig(length=8, image_size=64), s)
            for s in range(4)]

    def half_oracle(seq):
        out = []
        for i, g in enumerate(seq.gt[1:]):
            out.append(g if i % 2 == 0 else BBox.from_xywh(0, 0, 4, 4))
        return out

    a = mx.run_one_pass_eval(half_oracle, seqs)
    b = mx.run_one_pass_eval(half_oracle, seqs[::-1])
    npt.assert_allclose(a.auc, b.auc, atol=1e-15)
    npt.assert_allclose(a.ao, b.ao, atol=1e-15)


def test_per_sequence_then_mean():
    # two sequences of different lengths: frame-pooled averaging would
    # weight the long one more; sequence-mean weights them equally
    s1 = generate_sequence(SynthConfig(length=4, image_size=64), 0)
    s2 = generate_sequence(SynthConfig(length=20, image_size=64), 1)

    def oracle_for_first_only(seq):
        if len(seq.gt) == 4:
            return seq.gt[1:]
        return [BBox.from_xywh(0, 0, 1, 1)] * (len(seq.gt) - 1)

    report = mx.run_one_pass_eval(oracle_for_first_only, [s1, s2])
    npt.assert_allclose(report.ao, 0.5, atol=1e-12)


def test_report_files(tmp_path):
    seqs = [generate_sequence(SynthConfig(length=6, image_size=64), 0)]
    report = mx.run_one_pass_eval(lambda seq: seq.gt[1:], seqs)
    mx.write_report(report, tmp_path / "report.txt")
    text = (tmp_path / "report.txt").read_text()
    assert "auc=" in text and "ao=" in text
    mx.write_success_curve(report, tmp_path / "curve.csv")
    lines = (tmp_path / "curve.csv").read_text().strip().splitlines()
    assert len(lines) == 21
    assert lines[0].startswith("0.00,")
    assert lines[-1].startswith("1.00,")
    table = report.summary_table()
    assert "success AUC" in table


def test_eval_with_real_tracker_runs():
    from mcit.backbone import BackboneConfig
    from mcit import model as mdl
    from mcit.tracker import TrackerConfig
    cfg = mdl.ModelConfig(
        backbone=BackboneConfig(dim=16, depth=2, n_groups=2, heads=2,
                                template_size=32, search_size=32,
                                clip_len=2),
        state_size=4, cif_heads=2)
    m = mdl.build_model(cfg, seed=0)
    seqs = [generate_sequence(SynthConfig(length=5, image_size=64), 0)]
    report = mx.run_one_pass_eval(m, seqs, TrackerConfig())
    assert 0.0 <= report.ao <= 1.0
    assert report.n_sequences == 1
