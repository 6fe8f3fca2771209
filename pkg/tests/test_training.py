import math

import numpy as np
import pytest
import torch

from hvtrack import training
from hvtrack.dataset import Frame, Tracklet
from hvtrack.geometry import Box7
from hvtrack.model import HVTrack
from hvtrack.synth import SynthConfig, generate_dataset
from hvtrack.training import SequenceSampler, TrainConfig, TrainingError, check_finite, format_loss_log, train


@pytest.fixture(scope="module")
def data():
    return generate_dataset(SynthConfig(n_frames=8, seed=3, n_distractors=1), 2)


def _cfg(**kw):
    return TrainConfig(**{"steps": 3, "batch_size": 2, "seq_len": 4, "log_every": 0, **kw})


def test_same_seed_same_history(toy_cfg, data):
    a = train(toy_cfg, _cfg(seed=4, ref_jitter=0.2, ref_yaw_jitter=0.1), data)[1]
    b = train(toy_cfg, _cfg(seed=4, ref_jitter=0.2, ref_yaw_jitter=0.1), data)[1]
    assert format_loss_log(a) == format_loss_log(b)
    assert check_finite(a) and len(a) == 3
    c = train(toy_cfg, _cfg(seed=5), data)[1]
    assert format_loss_log(c) != format_loss_log(a)


def test_batched_backbone_matches_per_frame(toy_cfg):
    torch.manual_seed(0)
    model = HVTrack(toy_cfg).double().eval()
    pts = torch.randn(3, toy_cfg.n_input, 3, dtype=torch.float64)
    joint = model.backbone(pts)
    for i in range(3):
        alone = model.backbone(pts[i:i + 1])
        for j, k in zip(joint, alone):
            torch.testing.assert_close(j[i:i + 1], k, rtol=1e-12, atol=1e-12)


def test_nan_guard_names_components(toy_cfg, data, monkeypatch):
    real = training.hvtrack_loss

    def poisoned(*args, **kw):
        lb = real(*args, **kw)
        lb.l_alpha = lb.l_alpha * float("nan")
        return lb

    monkeypatch.setattr(training, "hvtrack_loss", poisoned)
    with pytest.raises(FloatingPointError, match="l_alpha"):
        train(toy_cfg, _cfg(), data)


def test_cosine_schedule_anneals(toy_cfg, data, monkeypatch):
    seen = []
    orig = torch.optim.Adam.step

    def spy(self, *a, **kw):
        seen.append(self.param_groups[0]["lr"])
        return orig(self, *a, **kw)

    monkeypatch.setattr(torch.optim.Adam, "step", spy)
    train(toy_cfg, _cfg(steps=4, lr=1e-2, cosine_lr=True), data)
    assert seen[0] == 1e-2
    assert all(x > y for x, y in zip(seen, seen[1:]))
    assert math.isclose(seen[-1], 1e-2 * (1 + math.cos(math.pi * 3 / 4)) / 2)


def test_sampler_needs_long_enough_tracklets(data):
    with pytest.raises(TrainingError, match="8 frames"):
        SequenceSampler([Tracklet(data[0].frames[:7], "Synthetic")], 8, np.random.default_rng(0))
    s = SequenceSampler(data, 8, np.random.default_rng(0))
    assert all(start == 0 for _, start in s.draw(5))


def test_pointless_tracklet_gives_up_after_redraws(toy_cfg, monkeypatch):
    box = Box7(10, 0, -1, 1.8, 4.2, 1.6)
    void = Tracklet([Frame(i, box, points=np.zeros((0, 3))) for i in range(4)], "Synthetic")
    monkeypatch.setattr(training, "MAX_REDRAWS", 3)
    with pytest.raises(TrainingError, match="3 consecutive"):
        train(toy_cfg, _cfg(), [void])
