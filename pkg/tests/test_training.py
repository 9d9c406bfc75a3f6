import numpy as np
import pytest

from fare.model import ModelConfig, build_model, freeze_pp, pp_forward
from fare.training import LabeledSet, TrainConfig, TrainingError, sample_triplets, train_ips, train_pp, triplet_batch_loss

CFG = ModelConfig(rdi_shape=(8, 8), micro_rdi_shape=(8, 16), layer1_channels=2, layer2_channels=3,
                  layer3_channels=4, embedding_dim=4)


def toy_set(n_per=8, seed=0):
    """Two classes whose images differ in a bright row, plus noise."""
    r = np.random.default_rng(seed)
    rdi = r.random((2 * n_per, 8, 8)) * 0.2
    micro = r.random((2 * n_per, 8, 16)) * 0.2
    rdi[:n_per, 2] += 1.0
    micro[n_per:, 5] += 1.0
    labels = np.repeat([0, 1], n_per)
    return LabeledSet(rdi, micro, labels, ("PER1", "PER2"))


def snapshot(model, names):
    return {n: model.params[n].data.tobytes() for n in names}


# ---------------------------------------------------------------- triplet sampling

def test_triplets_respect_labels():
    labels = np.array([0, 0, 1, 1])
    a, p, n = sample_triplets(labels, 200, np.random.default_rng(0))
    assert np.all(labels[a] == labels[p])
    assert np.all(a != p)
    assert np.all(labels[a] != labels[n])


def test_triplets_deterministic():
    labels = np.repeat(np.arange(5), 7)
    x = sample_triplets(labels, 50, np.random.default_rng(3))
    y = sample_triplets(labels, 50, np.random.default_rng(3))
    for u, v in zip(x, y):
        np.testing.assert_array_equal(u, v)


def test_anchor_class_frequencies_within_three_sigma():
    labels = np.repeat(np.arange(5), 20)
    a, p, _ = sample_triplets(labels, 10_000, np.random.default_rng(11))
    counts = np.bincount(labels[a], minlength=5)
    expect, sigma = 10_000 / 5, np.sqrt(10_000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - expect) < 3 * sigma)
    # positives exclude the anchor and are uniform over the other class members
    within = (p - a)[labels[a] == 0]
    assert 0 not in within


def test_triplet_sampling_errors():
    with pytest.raises(ValueError):
        sample_triplets(np.zeros(5, dtype=int), 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_triplets(np.array([0, 1, 1]), 50, np.random.default_rng(0))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(margin=-0.1)


def test_labeled_set_validation():
    with pytest.raises(ValueError):
        LabeledSet(np.zeros((3, 8, 8)), np.zeros((2, 8, 16)), [0, 1, 1])
    with pytest.raises(ValueError):
        LabeledSet(np.zeros((2, 8, 8)), np.zeros((2, 8, 16)), [0, 2], ("a", "b"))


# ---------------------------------------------------------------- stage 1

def test_triplet_loss_bounded():
    model = build_model(CFG, seed=0)
    data = toy_set()
    a, p, n = sample_triplets(data.labels, 16, np.random.default_rng(0))
    loss = triplet_batch_loss(model, data, a, p, n, 2.0).item()
    emb = pp_forward(model, data.rdi[:, None], data.micro_rdi[:, None]).embedding.data
    max_d = max(np.linalg.norm(x - y) for x in emb for y in emb)
    assert 0.0 <= loss <= 2.0 + max_d


def test_margin_zero_anchor_equals_positive_is_inert():
    model = build_model(CFG, seed=0)
    data = toy_set()
    idx = np.arange(4)
    loss = triplet_batch_loss(model, data, idx, idx, idx + 8, margin=0.0)
    assert loss.item() == 0.0
    loss.backward()
    for name in model.pp_names():
        g = model.params[name].grad
        assert g is None or not np.any(g)


def test_stage1_isolation_and_progress():
    model = build_model(CFG, seed=1)
    ip_before = snapshot(model, model.ip_names())
    pp_before = snapshot(model, model.pp_names())
    hist = train_pp(model, toy_set(), TrainConfig(stage1_epochs=8, batch_size=8, seed=2))
    assert len(hist) == 8 and all(np.isfinite(hist))
    assert hist[-1] < hist[0]
    assert snapshot(model, model.ip_names()) == ip_before
    assert snapshot(model, model.pp_names()) != pp_before


def test_stage1_deterministic():
    runs = []
    for _ in range(2):
        model = build_model(CFG, seed=1)
        train_pp(model, toy_set(), TrainConfig(stage1_epochs=2, batch_size=4, seed=5))
        runs.append(snapshot(model, model.params))
    assert runs[0] == runs[1]


def test_stage1_rejects_frozen_pp():
    model = freeze_pp(build_model(CFG))
    with pytest.raises(TrainingError):
        train_pp(model, toy_set(), TrainConfig(stage1_epochs=1))


def test_stage1_non_finite_names_batch():
    model = build_model(CFG)
    model.params["pp.C4.w"].data[...] = np.nan
    with pytest.raises(TrainingError, match="batch 0"):
        train_pp(model, toy_set(), TrainConfig(stage1_epochs=1, batch_size=4))


# ---------------------------------------------------------------- stage 2

def test_stage2_requires_frozen_pp():
    with pytest.raises(TrainingError):
        train_ips(build_model(CFG), toy_set(), TrainConfig(stage2_epochs=1))


def test_stage2_isolation_and_progress():
    model = build_model(CFG, seed=1)
    data = toy_set()
    train_pp(model, data, TrainConfig(stage1_epochs=2, batch_size=8))
    freeze_pp(model)
    pp_before = snapshot(model, model.pp_names())
    emb_before = pp_forward(model, data.rdi[:, None], data.micro_rdi[:, None]).embedding.data.tobytes()
    hists = train_ips(model, data, TrainConfig(stage2_epochs=20, batch_size=8))
    assert len(hists) == 6
    for h in hists:
        assert len(h) == 20 and all(np.isfinite(h))
        assert h[-1] < h[0]
    assert snapshot(model, model.pp_names()) == pp_before
    assert pp_forward(model, data.rdi[:, None], data.micro_rdi[:, None]).embedding.data.tobytes() == emb_before


def test_zero_epochs_leave_model_unchanged():
    model = build_model(CFG, seed=1)
    before = snapshot(model, model.params)
    assert train_pp(model, toy_set(), TrainConfig(stage1_epochs=0)) == []
    freeze_pp(model)
    assert train_ips(model, toy_set(), TrainConfig(stage2_epochs=0)) == [[]] * 6
    assert snapshot(model, model.params) == before
