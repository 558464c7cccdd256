import json

import numpy as np
import pytest
import torch

from advmakeup.errors import CheckpointError, ModelError
from advmakeup.models import (
    CLASSIFIER,
    DISCRIMINATOR,
    GENERATOR,
    Checkpoint,
    NetworkSpec,
    build_classifier,
    build_discriminator,
    build_generator,
    build_network,
    load_checkpoint,
    parameter_arrays,
    parameter_shapes,
    save_checkpoint,
)

import oracles

GEN = NetworkSpec(GENERATOR, 16, base_width=4, depth=1)
DISC = NetworkSpec(DISCRIMINATOR, 16, base_width=4, depth=2)
CLF = NetworkSpec(CLASSIFIER, 16, base_width=4, depth=2, num_classes=8)


def test_generator_shape_and_range():
    g = build_generator(NetworkSpec(GENERATOR, 64, 8, 2), seed=0)
    x = torch.rand(2, 64, 64, 3)
    with torch.no_grad():
        out = g(x)
    assert out.shape == (2, 64, 64, 3)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


@pytest.mark.parametrize("skip", [True, False])
def test_generator_range_on_extreme_inputs(skip):
    g = build_generator(NetworkSpec(GENERATOR, 16, 4, 1, input_skip=skip), seed=3)
    with torch.no_grad():
        for x in (torch.zeros(1, 16, 16, 3), torch.ones(1, 16, 16, 3), torch.rand(3, 16, 16, 3)):
            out = g(x)
            assert torch.all((out >= 0) & (out <= 1))


def test_generator_seed_determinism():
    x = torch.rand(1, 16, 16, 3)
    with torch.no_grad():
        a = build_generator(GEN, seed=5)(x)
        b = build_generator(GEN, seed=5)(x)
    assert torch.equal(a, b)


def test_skip_generator_starts_near_identity():
    x = torch.rand(2, 16, 16, 3) * 0.8 + 0.1
    with torch.no_grad():
        out = build_generator(GEN, seed=0)(x)
    assert float((out - x).abs().mean()) < 0.1


def test_generator_single_image():
    with torch.no_grad():
        out = build_generator(GEN)(torch.rand(16, 16, 3))
    assert out.shape == (16, 16, 3)


def test_discriminator_scores_open_interval():
    d = build_discriminator(DISC, seed=1)
    img = torch.rand(1, 16, 16, 3)
    with torch.no_grad():
        s = d(torch.cat([img, img, torch.rand(1, 16, 16, 3)]))
    assert s.shape == (3,)
    assert torch.all((s > 0) & (s < 1))
    assert s[0] == s[1]


def test_classifier_logits_length():
    c = build_classifier(CLF, seed=0)
    with torch.no_grad():
        z = c(torch.rand(4, 16, 16, 3))
    assert z.shape == (4, 8)
    assert torch.all(torch.isfinite(z))


def test_classifier_seeds_differ():
    x = torch.rand(2, 16, 16, 3)
    with torch.no_grad():
        assert not torch.equal(build_classifier(CLF, seed=0)(x), build_classifier(CLF, seed=1)(x))


def test_classifier_from_checkpoint_matches_source(tmp_path):
    src = build_classifier(CLF, seed=4)
    save_checkpoint(src, tmp_path / "c.npz", epoch=3)
    copy = build_classifier(CLF, seed=99, init=load_checkpoint(tmp_path / "c.npz"))
    x = torch.rand(3, 16, 16, 3)
    with torch.no_grad():
        assert torch.equal(src(x), copy(x))


def test_classifier_incompatible_checkpoint():
    other = NetworkSpec(CLASSIFIER, 16, 4, 2, num_classes=3)
    ckpt = Checkpoint.from_network(build_classifier(other))
    with pytest.raises(CheckpointError) as err:
        build_classifier(CLF, init=ckpt)
    assert err.value.code == "INCOMPATIBLE_CHECKPOINT"


def test_spec_mismatch_errors():
    with pytest.raises(ModelError):
        build_generator(DISC)
    with pytest.raises(ModelError):
        build_discriminator(CLF)
    with pytest.raises(ModelError):
        build_classifier(GEN)
    with pytest.raises(ModelError):
        NetworkSpec(CLASSIFIER, 16, 4, 2, num_classes=1)
    with pytest.raises(ModelError) as err:
        build_generator(GEN)(torch.rand(1, 8, 8, 3))
    assert err.value.code == "SPEC_MISMATCH"


@pytest.mark.parametrize("spec", [GEN, DISC, CLF])
def test_checkpoint_round_trip_bit_exact(tmp_path, spec):
    net = build_network(spec, seed=2)
    save_checkpoint(net, tmp_path / "n.npz", epoch=367, seed=2, config_digest="abc")
    loaded = load_checkpoint(tmp_path / "n.npz")
    assert loaded.spec == spec
    assert loaded.metadata["epoch"] == 367
    assert loaded.metadata["seed"] == 2
    original = parameter_arrays(net)
    assert list(original) == list(loaded.parameters)
    for name, arr in original.items():
        assert arr.dtype == loaded.parameters[name].dtype
        assert np.array_equal(arr, loaded.parameters[name])


def test_checkpoint_float64_round_trip(tmp_path):
    net = build_generator(GEN, seed=1, dtype=torch.float64)
    save_checkpoint(net, tmp_path / "g.npz")
    rebuilt = load_checkpoint(tmp_path / "g.npz").build()
    for a, b in zip(net.state_dict().values(), rebuilt.state_dict().values()):
        assert a.dtype == torch.float64 and torch.equal(a, b)


def test_sidecar_schema(tmp_path):
    save_checkpoint(build_classifier(CLF), tmp_path / "c.npz", epoch=1, seed=0, config_digest="d")
    meta = json.loads((tmp_path / "c.npz.json").read_text())
    for key in ("format_version", "kind", "spec", "epoch", "seed", "config_digest"):
        assert key in meta
    assert meta["kind"] == CLASSIFIER


def test_corrupted_header_is_version_mismatch(tmp_path):
    save_checkpoint(build_classifier(CLF), tmp_path / "c.npz")
    (tmp_path / "c.npz.json").write_text("{not json")
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(tmp_path / "c.npz")
    assert err.value.code == "VERSION_MISMATCH"
    meta = {"format_version": 999}
    (tmp_path / "c.npz.json").write_text(json.dumps(meta))
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(tmp_path / "c.npz")
    assert err.value.code == "VERSION_MISMATCH"


def test_missing_checkpoint_is_io_failure(tmp_path):
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(tmp_path / "nope.npz")
    assert err.value.code == "IO_FAILURE"


@pytest.mark.parametrize("spec", [GEN, DISC, CLF])
def test_parameter_shapes_depend_only_on_spec(spec):
    assert parameter_shapes(spec) == parameter_shapes(NetworkSpec(**spec.to_dict()))
    net = build_network(spec, seed=7)
    assert {k: tuple(v.shape) for k, v in net.state_dict().items()} == parameter_shapes(spec)
    assert all(np.all(np.isfinite(a)) for a in parameter_arrays(net).values())


TINY = [
    NetworkSpec(GENERATOR, 8, base_width=4, depth=1),
    NetworkSpec(DISCRIMINATOR, 8, base_width=4, depth=2),
    NetworkSpec(CLASSIFIER, 8, base_width=4, depth=2, num_classes=3),
]


@pytest.mark.parametrize("spec", TINY, ids=lambda s: s.kind)
def test_parameter_gradients_match_finite_differences(spec):
    torch.manual_seed(0)
    net = build_network(spec, seed=11, dtype=torch.float64)
    x = torch.rand(2, 8, 8, 3, dtype=torch.float64)
    w = torch.randn_like(net(x))

    def scalar():
        return (net(x) * w).sum()

    # biases that feed an instance norm have an exact gradient of zero, so the
    # floor sits just above central-difference cancellation noise at h=1e-5
    for name, p in net.named_parameters():
        err = oracles.check_gradient(scalar, p, n_samples=6, seed=1, h=1e-5, floor=1e-5)
        assert err < 1e-3, f"{spec.kind}.{name}: relative error {err}"
