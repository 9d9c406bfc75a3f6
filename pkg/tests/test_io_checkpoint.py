import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays, array_shapes

from fare import io as fio
from fare.checkpoint import Checkpoint, CheckpointError, decode, encode, load_checkpoint, require_stage, save_checkpoint
from fare.config import DEFAULT_YAML, ConfigError, ExperimentConfig, config_from_dict, load_config
from fare.detection import KnnIndex, OodThreshold, ScoreNormalizer
from fare.model import ModelConfig, build_model, freeze_pp

TINY = ModelConfig(rdi_shape=(8, 8), micro_rdi_shape=(8, 16), layer1_channels=2, layer2_channels=2,
                   layer3_channels=2, embedding_dim=3)


# ---------------------------------------------------------------- containers

def test_container_layout_by_hand():
    blob = fio.encode_container(np.array([[1.0, 2.0]], dtype=np.float32))
    assert blob[:4] == b"FARE"
    assert struct.unpack("<IIIII", blob[4:24]) == (1, 1, 2, 1, 2)
    assert blob[24:] == struct.pack("<ff", 1.0, 2.0)


@given(st.sampled_from([np.float32, np.float64, np.complex64]), array_shapes(min_dims=0, max_dims=4, max_side=5),
       st.data())
@settings(max_examples=60, deadline=None)
def test_container_round_trip_bit_exact(dtype, shape, data):
    arr = data.draw(arrays(dtype, shape))
    out = fio.decode_container(fio.encode_container(arr))
    assert out.dtype == np.dtype(dtype) and out.shape == arr.shape
    assert out.tobytes() == arr.tobytes()


def test_container_file_round_trip(tmp_path, rng):
    arr = (rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))).astype(np.complex64)
    fio.write_container(tmp_path / "x.fare", arr)
    assert fio.read_container(tmp_path / "x.fare").tobytes() == arr.tobytes()


def test_container_errors():
    good = fio.encode_container(np.arange(6, dtype=np.float64).reshape(2, 3))
    with pytest.raises(fio.ContainerError, match="magic"):
        fio.decode_container(b"NOPE" + good[4:])
    with pytest.raises(fio.ContainerError, match="truncated"):
        fio.decode_container(good[:-8])
    with pytest.raises(fio.ContainerError, match="truncated"):
        fio.decode_container(good + b"\0" * 8)
    with pytest.raises(fio.ContainerError, match="dtype"):
        fio.decode_container(good[:8] + struct.pack("<I", 9) + good[12:])
    with pytest.raises(fio.ContainerError, match="version"):
        fio.decode_container(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(fio.ContainerError):
        fio.encode_container(np.zeros(2, dtype=np.int32))


def test_checkpoint_layout_errors():
    blob = fio.encode_checkpoint({"a": 1}, {"x": np.zeros(2), "y": np.ones(1)})
    header, sections = fio.decode_checkpoint(blob)
    assert header == {"a": 1} and list(sections) == ["x", "y"]
    with pytest.raises(fio.ContainerError):
        fio.decode_checkpoint(blob[:-3])
    with pytest.raises(fio.ContainerError):
        fio.decode_checkpoint(blob + b"\0")
    with pytest.raises(fio.ContainerError):
        fio.decode_checkpoint(b"FARE" + blob[4:])
    dup = blob.replace(b"\x01\x00\x00\x00y", b"\x01\x00\x00\x00x")
    with pytest.raises(fio.ContainerError, match="duplicate"):
        fio.decode_checkpoint(dup)


# ---------------------------------------------------------------- model checkpoints

def calibrated_checkpoint(seed=0):
    r = np.random.default_rng(seed)
    model = freeze_pp(build_model(TINY, seed=seed))
    return Checkpoint(
        model=model, stage="ip_trained", classes=("PER1", "PER2"),
        normalizer=ScoreNormalizer(mean=r.random(6), std=r.random(6) + 0.5),
        threshold=OodThreshold(tau=1.25, target_tpr=0.95, calibration_size=40),
        knn=KnnIndex(embeddings=r.normal(size=(10, 3)), labels=np.arange(10) % 2, k=3),
    )


def test_checkpoint_round_trip_and_resave(tmp_path):
    ckpt = calibrated_checkpoint()
    save_checkpoint(tmp_path / "a.farc", ckpt)
    back = load_checkpoint(tmp_path / "a.farc", expected=TINY)
    for name, t in ckpt.model.params.items():
        assert back.model.params[name].data.tobytes() == t.data.tobytes()
    assert back.model.frozen_pp and back.calibrated and back.classes == ckpt.classes
    assert back.threshold == ckpt.threshold
    assert back.knn.labels.tolist() == ckpt.knn.labels.tolist() and back.knn.k == 3
    save_checkpoint(tmp_path / "b.farc", back)
    assert (tmp_path / "a.farc").read_bytes() == (tmp_path / "b.farc").read_bytes()


def test_checkpoint_config_mismatch_names_keys():
    blob = encode(calibrated_checkpoint())
    other = ModelConfig(**{**TINY.__dict__, "embedding_dim": 4, "layer1_channels": 3})
    with pytest.raises(CheckpointError, match="embedding_dim, layer1_channels"):
        decode(blob, expected=other)


def test_checkpoint_stage_requirements():
    pp_only = Checkpoint(model=build_model(TINY), stage="pp_trained", classes=("a", "b"))
    back = decode(encode(pp_only))
    with pytest.raises(CheckpointError, match="ip_trained.*train-ip"):
        require_stage(back, "ip_trained")
    uncal = Checkpoint(model=build_model(TINY), stage="ip_trained", classes=("a", "b"))
    with pytest.raises(CheckpointError, match="calibrate"):
        require_stage(decode(encode(uncal)), "ip_trained", calibrated=True)
    require_stage(decode(encode(calibrated_checkpoint())), "ip_trained", calibrated=True)
    with pytest.raises(CheckpointError):
        encode(Checkpoint(model=build_model(TINY), stage="bogus", classes=()))


def test_checkpoint_missing_parameter():
    ckpt = calibrated_checkpoint()
    del ckpt.model.params["ip3.dec.b"]
    with pytest.raises(CheckpointError, match="ip3.dec.b"):
        decode(encode(ckpt))


# ---------------------------------------------------------------- config

def test_default_yaml_equals_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(DEFAULT_YAML)
    assert load_config(p) == ExperimentConfig()
    assert load_config(None) == ExperimentConfig()


def test_shipped_configs_load():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    assert load_config(root / "default.yaml") == ExperimentConfig()
    smoke = load_config(root / "smoke.yaml")
    assert smoke.simulation.num_id == 3 and smoke.radar.samples_per_chirp == 32


def test_config_rejections():
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"radar": {"carier_freq": 1.0}})
    with pytest.raises(ConfigError, match="unknown top-level"):
        config_from_dict({"radr": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"preprocessing": {"micro_frames": 4}})
    with pytest.raises(ConfigError):
        config_from_dict({"detection": {"score_mode": "max"}})
    with pytest.raises(ConfigError):
        config_from_dict({"radar": {"samples_per_chirp": 48}})


def test_config_seed_override_and_dict():
    cfg = config_from_dict({"seed": 4, "training": {"lr": 1}})
    assert cfg.training.lr == 1.0 and isinstance(cfg.training.lr, float)
    assert cfg.with_seed(9).seed == 9 and cfg.with_seed(None) is cfg
    assert config_from_dict(cfg.to_dict()) == cfg
    assert cfg.model_config().micro_rdi_shape == (32, 512)
