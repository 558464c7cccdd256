import csv
import io
import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from advmakeup import objectives as obj
from advmakeup.errors import EvaluationError
from advmakeup.evaluation import (
    DIGITAL,
    EvaluationReport,
    FrameSet,
    attack_report,
    classify_frames,
    emit_report,
    frame_probability,
    perclass_csv,
)
from advmakeup.models import CLASSIFIER, NetworkSpec

K = 8
SIZE = 8


class IntensityClassifier(torch.nn.Module):
    """Puts a frame in the class whose level ``c / (K - 1)`` is closest to its mean intensity."""

    def __init__(self, k=K, size=SIZE):
        super().__init__()
        self.spec = NetworkSpec(CLASSIFIER, size, 4, 1, num_classes=k)
        self.levels = torch.linspace(0, 1, k)

    def forward(self, x):
        m = x.mean(dim=(1, 2, 3))[:, None]
        return -((m - self.levels.to(x.dtype)) ** 2)


class CyclingClassifier(torch.nn.Module):
    def __init__(self, pattern, k=K, size=SIZE):
        super().__init__()
        self.spec = NetworkSpec(CLASSIFIER, size, 4, 1, num_classes=k)
        self.pattern = pattern
        self.calls = 0

    def forward(self, x):
        out = torch.zeros(len(x), self.spec.num_classes)
        for row in range(len(x)):
            out[row, self.pattern[self.calls % len(self.pattern)]] = 1.0
            self.calls += 1
        return out


class ConstantGenerator(torch.nn.Module):
    def __init__(self, value):
        super().__init__()
        self.value = value

    def forward(self, x):
        return torch.full_like(x, self.value)


class Identity(torch.nn.Module):
    def forward(self, x):
        return x


def frames_of(cls, n, k=K):
    return np.full((n, SIZE, SIZE, 3), cls / (k - 1), dtype=np.float32)


def test_uniform_class_counts():
    counts = classify_frames(IntensityClassifier(), frames_of(2, 10))
    assert counts.tolist() == [0, 0, 10, 0, 0, 0, 0, 0]


def test_counts_conserve_total():
    rng = np.random.default_rng(0)
    counts = classify_frames(IntensityClassifier(), rng.random((50, SIZE, SIZE, 3)).astype(np.float32))
    assert counts.sum() == 50


def test_cycling_stub_counts():
    counts = classify_frames(CyclingClassifier([0, 1]), frames_of(0, 4))
    assert counts.tolist()[:2] == [2, 2] and counts.sum() == 4


def test_first_index_tie_break():
    class Flat(torch.nn.Module):
        spec = NetworkSpec(CLASSIFIER, SIZE, 4, 1, num_classes=3)

        def forward(self, x):
            return torch.zeros(len(x), 3)

    assert classify_frames(Flat(), frames_of(0, 5)).tolist() == [5, 0, 0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, K - 1), min_size=1, max_size=40))
def test_counts_match_brute_force_recount(labels):
    frames = np.concatenate([frames_of(c, 1) for c in labels])
    counts = classify_frames(IntensityClassifier(), frames)
    brute = [sum(1 for c in labels if c == i) for i in range(K)]
    assert counts.tolist() == brute


def test_dimension_mismatch():
    with pytest.raises(EvaluationError) as err:
        classify_frames(IntensityClassifier(), np.zeros((2, SIZE + 1, SIZE + 1, 3)))
    assert err.value.code == "DIMENSION_MISMATCH"


def test_frame_probability_examples():
    assert frame_probability([34, 66]) == [34.0, 66.0]
    assert frame_probability([0, 7, 0]) == [0.0, 100.0, 0.0]
    assert frame_probability([1, 1, 1, 1]) == [25.0] * 4


def test_frame_probability_empty():
    with pytest.raises(EvaluationError) as err:
        frame_probability([0, 0])
    assert err.value.code == "EMPTY_FRAMESET"
    with pytest.raises(EvaluationError):
        FrameSet(np.zeros((0, 4, 4, 3)))


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=20).filter(lambda c: sum(c) > 0))
def test_percent_conservation(counts):
    p = frame_probability(counts)
    assert abs(sum(p) - 100.0) <= 1e-9
    assert all(0 <= v <= 100 for v in p)
    for c, v in zip(counts, p):
        assert v == 100.0 * c / sum(counts)


def test_identity_generator_baseline():
    report = attack_report(IntensityClassifier(), Identity(), obj.BlurConfig(), frames_of(4, 6), obj.UNTARGETED, 4)
    assert report.per_class_percent[4] == 100.0
    assert report.baseline_per_class_percent == report.per_class_percent
    assert report.success is False
    assert report.digital_or_physical == DIGITAL


def test_constant_generator_moves_everything():
    report = attack_report(
        IntensityClassifier(), ConstantGenerator(3 / (K - 1)), obj.BlurConfig(), frames_of(4, 6), obj.TARGETED, 4, 3
    )
    assert report.per_class_percent[3] == 100.0
    assert report.baseline_per_class_percent[4] == 100.0
    assert report.success is True


def test_baseline_equals_plain_accuracy():
    frames = np.concatenate([frames_of(4, 7), frames_of(5, 3)])
    report = attack_report(IntensityClassifier(), Identity(), obj.BlurConfig(), frames, obj.UNTARGETED, 4)
    assert report.per_class_percent[4] == 70.0
    assert report.success is False


def test_untargeted_threshold():
    frames = np.concatenate([frames_of(4, 1), frames_of(1, 3)])
    report = attack_report(IntensityClassifier(), Identity(), obj.BlurConfig(1, 1.0), frames, obj.UNTARGETED, 4, tau=30)
    assert report.per_class_percent[4] == 25.0 and report.success is True


def test_mode_label_consistency():
    with pytest.raises(EvaluationError):
        attack_report(IntensityClassifier(), Identity(), obj.BlurConfig(), frames_of(0, 1), obj.UNTARGETED, 0, 1)
    with pytest.raises(EvaluationError):
        attack_report(IntensityClassifier(), Identity(), obj.BlurConfig(), frames_of(0, 1), obj.TARGETED, 0)


def test_report_rejects_bad_percents():
    with pytest.raises(EvaluationError):
        EvaluationReport([50.0, 49.0], 0, obj.UNTARGETED)


def _report():
    counts = [3, 0, 1, 0, 2, 0, 0, 1]
    return EvaluationReport(
        per_class_percent=frame_probability(counts),
        attacker_label=0,
        mode=obj.TARGETED,
        target_label=2,
        success=False,
        baseline_per_class_percent=frame_probability([7, 0, 0, 0, 0, 0, 0, 0]),
        num_frames=7,
        config_digest="abc",
    )


def test_emit_report_files(tmp_path):
    paths = emit_report(_report(), tmp_path)
    rows = list(csv.reader(io.StringIO(paths["csv"].read_text())))
    assert rows[0] == ["class", "percent"] and len(rows) == 9
    assert all(len(r[1].split(".")[1]) == 6 for r in rows[1:])
    assert abs(sum(float(r[1]) for r in rows[1:]) - 100) < 1e-6
    data = json.loads(paths["json"].read_text())
    for key in ("mode", "attacker_label", "target_label", "per_class_percent", "success", "thresholds",
                "baseline_per_class_percent", "config_digest"):
        assert key in data
    assert data["thresholds"] == {"tau": 50.0, "tau_prime": 50.0}
    assert paths["chart"].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_emit_report_byte_identical(tmp_path):
    a = emit_report(_report(), tmp_path / "a")
    b = emit_report(_report(), tmp_path / "b")
    for key in ("json", "csv", "chart"):
        assert a[key].read_bytes() == b[key].read_bytes()
    assert perclass_csv(_report()) == a["csv"].read_text()


def test_emit_report_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(EvaluationError) as err:
        emit_report(_report(), blocker / "sub")
    assert err.value.code == "IO_FAILURE"


def test_frameset_from_directory(tmp_path):
    from advmakeup.dataset import save_image

    for i in range(3):
        save_image(np.full((10, 10, 3), i / 4), tmp_path / f"f{i:02d}.png")
    fs = FrameSet.from_directory(tmp_path, attacker_label=1, image_size=8)
    assert len(fs) == 3 and fs.frames.shape == (3, 8, 8, 3)
    with pytest.raises(EvaluationError):
        FrameSet.from_directory(tmp_path / "none")
