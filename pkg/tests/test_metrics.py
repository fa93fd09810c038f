import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geolabel.errors import EmptyMatrix, ResolutionMismatch
from geolabel.geometry import CameraModel
from geolabel.metrics import (
    ConfusionMatrix,
    accumulate,
    eval_registration,
    fw_miou,
    pct,
    pixel_accuracy,
    text_report,
    write_metrics_csv,
)
from geolabel.register import SupportBBox


def half_split():
    gt = np.ones((10, 10), np.uint8)
    gt[:, 5:] = 2
    return np.ones((10, 10), np.uint8), gt


class TestAccumulate:
    def test_perfect(self):
        cm = accumulate(np.ones((10, 10)), np.ones((10, 10)))
        assert cm.counts[1, 1] == 100 and cm.total == 100

    def test_half(self):
        pred, gt = half_split()
        cm = accumulate(pred, gt)
        assert cm.counts[1, 1] == 50 and cm.counts[2, 1] == 50

    def test_ignore_unlabeled(self):
        gt = np.ones((8, 8), np.uint8)
        gt.ravel()[:10] = 0
        assert accumulate(np.ones((8, 8)), gt).total == 64 - 10
        assert accumulate(np.ones((8, 8)), gt, ignore_unlabeled_gt=False).total == 64

    def test_mismatch(self):
        with pytest.raises(ResolutionMismatch):
            accumulate(np.ones((3, 3)), np.ones((3, 4)))

    def test_additive(self):
        rng = np.random.default_rng(0)
        pred = rng.integers(0, 5, (20, 20))
        gt = rng.integers(0, 5, (20, 20))
        m = rng.random((20, 20)) < 0.4
        a = accumulate(pred, gt, num_classes=4, mask=m)
        b = accumulate(pred, gt, num_classes=4, mask=~m)
        assert np.array_equal((a + b).counts, accumulate(pred, gt, num_classes=4).counts)

    def test_add_pads(self):
        s = ConfusionMatrix.zeros(2) + ConfusionMatrix.zeros(4)
        assert s.num_classes == 4


class TestScores:
    def test_perfect(self):
        cm = accumulate(np.ones((10, 10)), np.ones((10, 10)))
        assert pixel_accuracy(cm) == 1.0 and fw_miou(cm) == 1.0

    def test_half_worked_example(self):
        cm = accumulate(*half_split())
        assert abs(pixel_accuracy(cm) - 0.5) <= 1e-12
        # f1 * IoU1 + f2 * IoU2 = 0.5 * 50 / (50 + 50) + 0.5 * 0
        assert abs(fw_miou(cm) - 0.25) <= 1e-12

    def test_all_wrong(self):
        assert pixel_accuracy(accumulate(np.full((4, 4), 2), np.ones((4, 4)))) == 0.0

    def test_empty(self):
        with pytest.raises(EmptyMatrix):
            pixel_accuracy(ConfusionMatrix.zeros(2))
        with pytest.raises(EmptyMatrix):
            fw_miou(ConfusionMatrix.zeros(2))

    def test_unlabeled_prediction_counts_as_error(self):
        cm = accumulate(np.zeros((2, 2)), np.ones((2, 2)))
        assert pixel_accuracy(cm) == 0.0 and fw_miou(cm) == 0.0

    def test_pct(self):
        assert pct(1.0) == "100.00" and pct(0.8705) == "87.05"


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.uint8, (6, 7), elements=st.integers(0, 4)),
    arrays(np.uint8, (6, 7), elements=st.integers(0, 4)),
    st.permutations([1, 2, 3, 4]),
)
def test_scores_range_and_permutation(pred, gt, perm):
    if not (gt > 0).any():
        return
    cm = accumulate(pred, gt, num_classes=4)
    acc, fw = pixel_accuracy(cm), fw_miou(cm)
    assert 0.0 <= acc <= 1.0 and 0.0 <= fw <= 1.0
    exact = bool(np.all(pred[gt > 0] == gt[gt > 0]))
    assert (acc == 1.0) == exact and (abs(fw - 1.0) < 1e-12) == exact
    lut = np.array([0] + list(perm), np.uint8)
    cm2 = accumulate(lut[pred], lut[gt], num_classes=4)
    assert abs(fw_miou(cm2) - fw) < 1e-12


def stripes(w, h, width, offset=0):
    cols = ((np.arange(w) + offset) // width) % 2 + 1
    return np.broadcast_to(cols[None, :], (h, w)).astype(np.uint8)


class TestEvalRegistration:
    def test_identity(self):
        cam = CameraModel(100.0, 100.0, 50.0, 40.0, 100, 80)
        lab = stripes(100, 80, 7)
        assert eval_registration(lab, lab, cam, cam, SupportBBox(0, 0, 100, 80)) == (1.0, 1.0)

    def test_two_px_shift_matches_stripe_oracle(self):
        w, h, width, shift = 200, 60, 10, 2
        cam = CameraModel(100.0, 100.0, 100.0, 30.0, w, h)
        lab = stripes(w, h, width)
        acc, _ = eval_registration(lab, lab, cam, cam, SupportBBox(shift, 0, w + shift, h))
        # output column i reads source column i + 2, scored only where that column exists
        stripe = lambda c: (c // width) % 2 + 1
        scored = [i for i in range(w) if i + shift <= w - 1]
        wrong = sum(stripe(i + shift) != stripe(i) for i in scored)
        assert abs((1 - acc) - wrong / len(scored)) <= 1e-3


class TestReports:
    def test_text_report_keys(self):
        cm = accumulate(*half_split())
        txt = text_report(cm, ["road", "car"], title="demo")
        assert "accuracy = 50.00" in txt and "fw_miou = 25.00" in txt
        assert "road" in txt and "car" in txt

    def test_csv(self, tmp_path):
        p = tmp_path / "m.csv"
        write_metrics_csv([{"frame": "a", "accuracy": "1.00"}, {"frame": "b", "accuracy": "0.50"}], p)
        assert p.read_text().splitlines() == ["frame,accuracy", "a,1.00", "b,0.50"]
