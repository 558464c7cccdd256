import json

import numpy as np
import pytest
import torch

from advmakeup import objectives as obj
from advmakeup.dataset import MAKEUP, NON_MAKEUP, scan_manifest
from advmakeup.errors import TrainingError
from advmakeup.models import CLASSIFIER, Checkpoint, NetworkSpec, build_classifier, parameter_arrays
from advmakeup.synthetic import make_identities, render_class_images, render_makeup_images, write_corpus
from advmakeup.training import (
    PUBLISHED_PRETRAINED,
    PUBLISHED_SCRATCH,
    ClassifierTrainConfig,
    TrainHistory,
    fit_classifier,
    run_attack,
    select_adversarial_snapshot,
    train_attack,
    train_classifier,
)

SIZE = 16
CLF = NetworkSpec(CLASSIFIER, SIZE, base_width=4, depth=2, num_classes=3)
TINY_ATTACK = dict(generator_width=4, generator_depth=1, discriminator_width=4, discriminator_depth=2)


@pytest.fixture(scope="module")
def data():
    ids = make_identities(3, seed=0)
    x, labels = render_class_images(ids, 3, seed=1, size=SIZE)
    y = render_makeup_images(4, seed=2, size=SIZE)
    return x, labels, y


def test_published_regimes_accepted():
    assert (PUBLISHED_PRETRAINED.learning_rate, PUBLISHED_PRETRAINED.epochs, PUBLISHED_PRETRAINED.batch_size) == (1e-5, 367, 25)
    assert PUBLISHED_SCRATCH.epochs == 408 and PUBLISHED_SCRATCH.regime == "scratch"
    assert ClassifierTrainConfig(1e-5, 367, 25, init_checkpoint="w.npz").regime == "pretrained"
    published_attack = obj.AttackConfig(learning_rate=2e-4, batch_size=1, epochs=101)
    assert published_attack.epochs > 100


@pytest.mark.parametrize("kwargs", [dict(learning_rate=0), dict(epochs=0), dict(batch_size=0)])
def test_classifier_config_invariants(kwargs):
    with pytest.raises(Exception):
        ClassifierTrainConfig(**kwargs)


def test_one_epoch_one_record(data):
    x, labels, _ = data
    _, history = fit_classifier(ClassifierTrainConfig(epochs=1, batch_size=25), CLF, x[:2], labels[:2], x[:2], labels[:2])
    assert len(history) == 1 and history.records[0]["epoch"] == 1
    assert set(history.records[0]) == {"epoch", "cross_entropy", "train_accuracy", "test_accuracy"}


def test_classifier_training_deterministic(data):
    x, labels, _ = data
    cfg = ClassifierTrainConfig(learning_rate=1e-3, epochs=2, batch_size=4, seed=3)
    a_net, a = fit_classifier(cfg, CLF, x, labels, x, labels)
    b_net, b = fit_classifier(cfg, CLF, x, labels, x, labels)
    assert a.records == b.records
    for k, v in parameter_arrays(a_net).items():
        assert np.array_equal(v, parameter_arrays(b_net)[k])


def test_history_monotone_and_jsonl(tmp_path):
    h = TrainHistory()
    h.append({"epoch": 1, "loss": 0.5}, 1.0)
    with pytest.raises(TrainingError) as err:
        h.append({"epoch": 1, "loss": 0.4}, 1.0)
    assert err.value.code == "NON_MONOTONE_HISTORY"
    h.append({"epoch": 2, "loss": 0.25}, 2.0)
    h.to_jsonl(tmp_path / "h.jsonl")
    assert TrainHistory.from_jsonl(tmp_path / "h.jsonl").records == h.records
    lines = (tmp_path / "h.jsonl").read_text().splitlines()
    assert [set(json.loads(line)) for line in lines] == [{"epoch", "loss"}] * 2


def test_train_classifier_from_manifests(tmp_path):
    write_corpus(tmp_path, num_classes=3, train_per_class=3, test_per_class=2, makeup_count=2, size=SIZE)
    train = scan_manifest(tmp_path / "train", NON_MAKEUP)
    test = scan_manifest(tmp_path / "test", NON_MAKEUP)
    ckpt, history = train_classifier(ClassifierTrainConfig(1e-3, 2, 4), train, test, CLF, out_path=tmp_path / "c.npz")
    assert (tmp_path / "c.npz").is_file() and ckpt.metadata["epoch"] == 2
    assert all(r["test_accuracy"] is not None for r in history.records)
    bad = NetworkSpec(CLASSIFIER, SIZE, 4, 2, num_classes=5)
    with pytest.raises(TrainingError) as err:
        train_classifier(ClassifierTrainConfig(1e-3, 1, 4), train, test, bad)
    assert err.value.code == "CLASS_COUNT_MISMATCH"


def test_pretrained_regime_starts_from_checkpoint(data, tmp_path):
    x, labels, _ = data
    init = Checkpoint.from_network(build_classifier(CLF, seed=42))
    cfg = ClassifierTrainConfig(learning_rate=1e-12, epochs=1, batch_size=9)
    net, _ = fit_classifier(cfg, CLF, x, labels, init=init)
    for k, v in parameter_arrays(net).items():
        np.testing.assert_allclose(v, init.parameters[k], atol=1e-9)


# -- attack training ----------------------------------------------------------


def _attack_cfg(**kw):
    base = dict(epochs=2, batch_size=2, checkpoint_every=1, **TINY_ATTACK)
    base.update(kw)
    return obj.AttackConfig(**base)


def test_victim_is_frozen(data):
    x, labels, y = data
    victim = Checkpoint.from_network(build_classifier(CLF, seed=0))
    before = {k: v.copy() for k, v in victim.parameters.items()}
    net = victim.build()
    result = run_attack(_attack_cfg(), net, x[labels == 1], 1, y)
    for k, v in parameter_arrays(net).items():
        assert np.array_equal(v, before[k])
    assert all(not p.requires_grad for p in net.parameters())
    assert len(result.history) == 2


def test_attack_history_accounting(data):
    x, labels, y = data
    result = run_attack(_attack_cfg(), build_classifier(CLF), x[labels == 0], 0, y)
    for r in result.history.records:
        assert r["cyclegan_total"] == pytest.approx(r["gan"] + r["lambda_cycle"] * r["cycle"]
                                                    + r["alpha_identity"] * r["identity"], rel=1e-12)
        assert r["total"] == pytest.approx(r["cyclegan_total"] + r["adv"], rel=1e-12)
        assert r["adv"] >= -r["kappa"] - 1e-9
        assert 0 <= r["success_rate"] <= 1
    assert [c.epoch for c in result.snapshots] == [1, 2]


def test_attack_deterministic(data, tmp_path):
    x, labels, y = data
    cfg = _attack_cfg(seed=7)
    run_attack(cfg, build_classifier(CLF), x[labels == 2], 2, y, out_dir=tmp_path / "a")
    run_attack(cfg, build_classifier(CLF), x[labels == 2], 2, y, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "history.jsonl").read_bytes() == (tmp_path / "b" / "history.jsonl").read_bytes()
    assert (tmp_path / "a" / "checkpoints" / "generator_epoch0002.npz").is_file()


def test_targeted_attack_runs(data):
    x, labels, y = data
    result = run_attack(_attack_cfg(mode=obj.TARGETED, target_label=2, epochs=1), build_classifier(CLF), x[labels == 0], 0, y)
    assert result.generator.metadata["target_label"] == 2


def test_incompatible_victim_label(data):
    x, _, y = data
    with pytest.raises(TrainingError) as err:
        run_attack(_attack_cfg(), build_classifier(CLF), x[:2], 3, y)
    assert err.value.code == "INCOMPATIBLE_VICTIM"


class _PoisonAfter(torch.nn.Module):
    """Victim wrapper whose logits turn NaN after a fixed number of calls."""

    def __init__(self, net, calls):
        super().__init__()
        self.net = net
        self.spec = net.spec
        self.left = calls

    def forward(self, x):
        self.left -= 1
        z = self.net(x)
        return z * float("nan") if self.left < 0 else z


def test_divergence_keeps_last_checkpoint(data):
    x, labels, y = data
    cfg = _attack_cfg(epochs=4, batch_size=3)
    # one victim call per batch, one batch per epoch: poison from epoch 3
    victim = _PoisonAfter(build_classifier(CLF), calls=2)
    with pytest.raises(TrainingError) as err:
        run_attack(cfg, victim, x[labels == 0], 0, y)
    assert err.value.code == "DIVERGENCE"
    assert err.value.last_checkpoint.epoch == 2
    assert len(err.value.history) == 2


def test_train_attack_manifest_checks(tmp_path):
    write_corpus(tmp_path, num_classes=3, train_per_class=2, test_per_class=1, makeup_count=2, size=SIZE)
    x_set = scan_manifest(tmp_path / "train", NON_MAKEUP)
    y_set = scan_manifest(tmp_path / "makeup", MAKEUP)
    victim = Checkpoint.from_network(build_classifier(CLF))
    with pytest.raises(TrainingError) as err:
        train_attack(_attack_cfg(), victim, x_set, y_set)
    assert err.value.code == "AMBIGUOUS_ATTACKER"
    with pytest.raises(TrainingError) as err:
        train_attack(_attack_cfg(), victim, x_set, x_set, attacker_label=0)
    assert err.value.code == "WRONG_DOMAIN"
    wrong = Checkpoint.from_network(build_classifier(NetworkSpec(CLASSIFIER, SIZE, 4, 2, num_classes=4)))
    with pytest.raises(TrainingError) as err:
        train_attack(_attack_cfg(), wrong, x_set, y_set, attacker_label=0)
    assert err.value.code == "INCOMPATIBLE_VICTIM"
    result = train_attack(_attack_cfg(epochs=1), victim, x_set, y_set, attacker_label=1, out_dir=tmp_path / "run")
    assert result.generator.metadata["attacker_label"] == 1
    assert (tmp_path / "run" / "history.jsonl").is_file()


# -- snapshot selection -------------------------------------------------------


def _ckpt(epoch):
    return Checkpoint.from_network(build_classifier(CLF, seed=epoch), epoch=epoch)


def _rec(epoch, adv, cycle, saturated):
    return {"epoch": epoch, "adv": adv, "cycle": cycle, "lambda_cycle": 100.0, "saturated_fraction": saturated}


def test_select_single_checkpoint():
    c = _ckpt(1)
    chosen = select_adversarial_snapshot(TrainHistory(), [c])
    assert chosen.epoch == 1 and chosen.metadata["selection_warning"] is False


def test_select_lower_cycle_on_equal_adv():
    h = TrainHistory(records=[_rec(10, -5.0, 0.3, 1.0), _rec(20, -5.0, 0.1, 1.0)])
    chosen = select_adversarial_snapshot(h, [_ckpt(10), _ckpt(20)])
    assert chosen.epoch == 20 and chosen.metadata["selection_warning"] is False


def test_select_only_successful_epochs():
    h = TrainHistory(records=[_rec(10, -1.0, 0.01, 0.0), _rec(20, -5.0, 0.2, 0.8)])
    assert select_adversarial_snapshot(h, [_ckpt(10), _ckpt(20)]).epoch == 20


def test_select_fallback_warns(caplog):
    h = TrainHistory(records=[_rec(10, 2.0, 0.01, 0.0), _rec(20, 1.0, 0.5, 0.0)])
    chosen = select_adversarial_snapshot(h, [_ckpt(10), _ckpt(20)])
    assert chosen.epoch == 20 and chosen.metadata["selection_warning"] is True
    assert "NO_SUCCESSFUL_EPOCH" in caplog.text


def test_select_requires_checkpoint():
    with pytest.raises(TrainingError):
        select_adversarial_snapshot(TrainHistory(), [])
