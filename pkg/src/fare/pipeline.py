"""Experiment orchestration behind the CLI subcommands.

All artifacts live under one workspace directory::

    dataset/manifest.json, dataset/raw_<name>.fare      simulate
    features/<name>_rdi.fare, features/<name>_micro.fare preprocess
    pp.farc, loss_pp.csv                                train-pp
    ip.farc, loss_ip.csv                                train-ip (calibrate appends to ip.farc)
    metrics.txt, metrics.csv, confusion.csv             evaluate
    ablation.txt, ablation.csv                          ablate
    decision.json                                       predict
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as fio
from .checkpoint import Checkpoint, load_checkpoint, require_stage, save_checkpoint
from .config import ExperimentConfig
from .detection import (calibrate_threshold, decide, forward_stats, knn_fit, knn_predict, score_errors,
                        ScoreNormalizer)
from .metrics import ScoredPopulations, accuracy, confusion_matrix, ood_report
from .model import IP_KEYS, build_model, freeze_pp
from .radar_dsp import MICRO_FRAMES, build_micro_rdi, build_rdi, preprocess_sequence
from .scene_sim import DatasetManifest, SimDatasetConfig, generate_dataset, load_manifest
from .training import LabeledSet, train_ips, train_pp

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("AUROC", "AUPR_IN", "AUPR_OUT", "FPR95")
ABLATION_ROWS = (
    ("Layer 1", (0, 2)),
    ("Layer 1-2", (0, 1, 2, 3)),
    ("Layer 1-2-3", (0, 1, 2, 3, 4)),
    ("Layer 1-2-3-4", (0, 1, 2, 3, 4, 5)),
)


class MissingArtifactError(FileNotFoundError):
    def __init__(self, what: Path, command: str):
        super().__init__(f"{what} not found; run `fare {command}` first")


@dataclass
class Workspace:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def dataset(self) -> Path:
        return self.root / "dataset"

    @property
    def features(self) -> Path:
        return self.root / "features"

    @property
    def pp_checkpoint(self) -> Path:
        return self.root / "pp.farc"

    @property
    def ip_checkpoint(self) -> Path:
        return self.root / "ip.farc"

    def need(self, path: Path, command: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(path, command)
        return path

    def manifest(self) -> DatasetManifest:
        self.need(self.dataset / "manifest.json", "simulate")
        return load_manifest(self.dataset)

    def feature_paths(self, name: str) -> tuple[Path, Path]:
        return self.features / f"{name}_rdi.fare", self.features / f"{name}_micro.fare"

    def load_features(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        rdi_p, micro_p = self.feature_paths(name)
        self.need(rdi_p, "preprocess")
        self.need(micro_p, "preprocess")
        return (fio.read_container(rdi_p).astype(np.float64),
                fio.read_container(micro_p).astype(np.float64))


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _id_split(ws: Workspace, split: str) -> LabeledSet:
    manifest = ws.manifest()
    classes = tuple(e.name for e in manifest.id_entries)
    rdis, micros, labels = [], [], []
    for label, entry in enumerate(manifest.id_entries):
        lo, hi = entry.splits[split]
        rdi, micro = ws.load_features(entry.name)
        rdis.append(rdi[lo:hi])
        micros.append(micro[lo:hi])
        labels.append(np.full(hi - lo, label))
    return LabeledSet(np.concatenate(rdis), np.concatenate(micros), np.concatenate(labels), classes)


def _ood_test(ws: Workspace) -> tuple[np.ndarray, np.ndarray]:
    rdis, micros = [], []
    for entry in ws.manifest().ood_entries:
        lo, hi = entry.splits["test"]
        rdi, micro = ws.load_features(entry.name)
        rdis.append(rdi[lo:hi])
        micros.append(micro[lo:hi])
    if not rdis:
        raise ValueError("the dataset has no OOD identities to evaluate against")
    return np.concatenate(rdis), np.concatenate(micros)


# ---------------------------------------------------------------- commands

def simulate(cfg: ExperimentConfig, out: Path, overwrite: bool = False) -> DatasetManifest:
    ws = Workspace(out)
    s = cfg.simulation
    return generate_dataset(SimDatasetConfig(
        out_dir=ws.dataset, radar=cfg.radar, num_id=s.num_id, num_ood=s.num_ood,
        frames_per_identity=s.frames_per_identity, split=tuple(s.split),
        micro_frames=cfg.preprocessing.micro_frames, seed=cfg.seed, overwrite=overwrite,
    ))


def preprocess(cfg: ExperimentConfig, out: Path) -> list[str]:
    ws = Workspace(out)
    manifest = ws.manifest()
    p = cfg.preprocessing
    done = []
    for entry in manifest.identities:
        frames = fio.read_container(ws.need(ws.dataset / entry.file, "simulate")).astype(np.complex128)
        rdi, micro = preprocess_sequence(frames, cfg.radar, p.sinc_cutoff, p.sinc_taps, p.enhancement)
        rdi_p, micro_p = ws.feature_paths(entry.name)
        fio.write_container(rdi_p, rdi.astype(np.float32))
        fio.write_container(micro_p, micro.astype(np.float32))
        done.append(entry.name)
        log.info("preprocessed %s: %d samples", entry.name, len(rdi))
    return done


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    lines = [",".join(header)] + [",".join(r) for r in rows]
    fio.atomic_write_text(path, "\n".join(lines) + "\n")


def train_pp_stage(cfg: ExperimentConfig, out: Path) -> list[float]:
    ws = Workspace(out)
    train = _id_split(ws, "train")
    model = build_model(cfg.model_config(), seed=cfg.seed)
    history = train_pp(model, train, cfg.train_config())
    save_checkpoint(ws.pp_checkpoint, Checkpoint(model=model, stage="pp_trained", classes=train.classes,
                                                 score_mode=cfg.detection.score_mode))
    _write_csv(ws.root / "loss_pp.csv", ["epoch", "triplet_loss"],
               [[str(i + 1), _fmt(v)] for i, v in enumerate(history)])
    return history


def train_ip_stage(cfg: ExperimentConfig, out: Path) -> list[list[float]]:
    ws = Workspace(out)
    ckpt = load_checkpoint(ws.need(ws.pp_checkpoint, "train-pp"), cfg.model_config())
    train = _id_split(ws, "train")
    freeze_pp(ckpt.model)
    histories = train_ips(ckpt.model, train, cfg.train_config())
    save_checkpoint(ws.ip_checkpoint, Checkpoint(model=ckpt.model, stage="ip_trained", classes=ckpt.classes,
                                                 score_mode=cfg.detection.score_mode))
    header = ["epoch"] + [f"{m}{k}" for m, k in IP_KEYS]
    rows = [[str(e + 1)] + [_fmt(h[e]) for h in histories] for e in range(len(histories[0]))] if histories[0] else []
    _write_csv(ws.root / "loss_ip.csv", header, rows)
    return histories


def _load_ip(ws: Workspace, cfg: ExperimentConfig, calibrated: bool) -> Checkpoint:
    ckpt = load_checkpoint(ws.need(ws.ip_checkpoint, "train-ip"), cfg.model_config())
    require_stage(ckpt, "ip_trained", calibrated=calibrated)
    return ckpt


def calibrate(cfg: ExperimentConfig, out: Path) -> Checkpoint:
    """Fit the score normalizer, the 95%-TPR threshold and the KNN index; append them to ip.farc."""
    ws = Workspace(out)
    ckpt = _load_ip(ws, cfg, calibrated=False)
    cal = _id_split(ws, "calibration")
    train = _id_split(ws, "train")
    _, cal_err = forward_stats(ckpt.model, cal.rdi, cal.micro_rdi)
    normalizer = ScoreNormalizer.from_errors(cal_err)
    scores = score_errors(cal_err, normalizer, cfg.detection.score_mode)
    threshold = calibrate_threshold(scores, cfg.detection.target_tpr)
    train_emb, _ = forward_stats(ckpt.model, train.rdi, train.micro_rdi)
    ckpt.normalizer, ckpt.threshold = normalizer, threshold
    ckpt.knn = knn_fit(train_emb, train.labels, cfg.detection.knn_k)
    ckpt.score_mode = cfg.detection.score_mode
    save_checkpoint(ws.ip_checkpoint, ckpt)
    log.info("calibrated: tau=%.6f, accepted %.4f of %d calibration IDs", threshold.tau,
             float(np.mean(scores <= threshold.tau)), len(scores))
    return ckpt


@dataclass
class EvalData:
    classes: tuple[str, ...]
    id_labels: np.ndarray
    id_errors: np.ndarray
    id_embeddings: np.ndarray
    ood_errors: np.ndarray
    ood_embeddings: np.ndarray
    cal_errors: np.ndarray


def _collect(ws: Workspace, ckpt: Checkpoint) -> EvalData:
    test = _id_split(ws, "test")
    cal = _id_split(ws, "calibration")
    ood_rdi, ood_micro = _ood_test(ws)
    id_emb, id_err = forward_stats(ckpt.model, test.rdi, test.micro_rdi)
    ood_emb, ood_err = forward_stats(ckpt.model, ood_rdi, ood_micro)
    _, cal_err = forward_stats(ckpt.model, cal.rdi, cal.micro_rdi)
    return EvalData(test.classes, test.labels, id_err, id_emb, ood_err, ood_emb, cal_err)


def evaluate(cfg: ExperimentConfig, out: Path) -> dict:
    """Per-class and pooled OOD metrics, KNN accuracy and confusion matrix on the test split."""
    ws = Workspace(out)
    ckpt = _load_ip(ws, cfg, calibrated=True)
    data = _collect(ws, ckpt)
    mode = ckpt.score_mode
    id_scores = score_errors(data.id_errors, ckpt.normalizer, mode)
    ood_scores = score_errors(data.ood_errors, ckpt.normalizer, mode)
    tpr = cfg.evaluation.fpr_target_tpr

    preds = knn_predict(ckpt.knn, data.id_embeddings)
    classes = data.classes
    rows: dict[str, dict[str, float]] = {}
    for c, name in enumerate(classes):
        mask = data.id_labels == c
        rep = ood_report(ScoredPopulations(id_scores[mask], ood_scores), tpr)
        rep["accuracy"] = accuracy(preds[mask], data.id_labels[mask])
        rep["n_id"], rep["n_ood"] = int(mask.sum()), len(ood_scores)
        rows[name] = rep
    pooled = ood_report(ScoredPopulations(id_scores, ood_scores), tpr)
    pooled["accuracy"] = accuracy(preds, data.id_labels)
    pooled["n_id"], pooled["n_ood"] = len(id_scores), len(ood_scores)
    rows["pooled"] = pooled
    conf = confusion_matrix([classes[p] for p in preds], [classes[t] for t in data.id_labels], classes)

    decisions = decide(id_scores, data.id_embeddings, ckpt.threshold, ckpt.knn, classes)
    ood_dec = decide(ood_scores, data.ood_embeddings, ckpt.threshold, ckpt.knn, classes)
    gate = {
        "id_accept_rate": float(np.mean([not d.is_ood for d in decisions])),
        "id_end_to_end_accuracy": float(np.mean([d.verdict == classes[t] for d, t in zip(decisions, data.id_labels)])),
        "ood_reject_rate": float(np.mean([d.is_ood for d in ood_dec])),
        "tau": ckpt.threshold.tau,
    }

    cols = list(METRIC_COLUMNS) + ["accuracy"]
    _write_csv(ws.root / "metrics.csv", ["scope"] + cols + ["n_id", "n_ood"],
               [[k] + [_fmt(v[c]) for c in cols] + [str(v["n_id"]), str(v["n_ood"])] for k, v in rows.items()])
    _write_csv(ws.root / "confusion.csv", ["true\\pred"] + list(classes),
               [[classes[i]] + [str(x) for x in row] for i, row in enumerate(conf)])
    fio.atomic_write_text(ws.root / "metrics.txt", _metrics_text(rows, conf, classes, gate, mode))
    return {"rows": rows, "confusion": conf, "gate": gate, "classes": classes}


def _metrics_text(rows, conf, classes, gate, mode) -> str:
    cols = list(METRIC_COLUMNS) + ["accuracy"]
    lines = [f"OOD detection (score mode: {mode}; values in %)", ""]
    lines.append(f"{'scope':<8}" + "".join(f"{c:>10}" for c in cols))
    for k, v in rows.items():
        lines.append(f"{k:<8}" + "".join(f"{100 * v[c]:>10.2f}" for c in cols))
    lines += ["", "Confusion matrix (rows = true, columns = predicted)", " " * 8 + "".join(f"{c:>7}" for c in classes)]
    for name, row in zip(classes, conf):
        lines.append(f"{name:<8}" + "".join(f"{x:>7d}" for x in row))
    lines += ["", f"threshold tau = {gate['tau']:.6f}",
              f"ID test accepted by the gate: {100 * gate['id_accept_rate']:.2f}%",
              f"ID test accepted and correctly classified: {100 * gate['id_end_to_end_accuracy']:.2f}%",
              f"OOD test rejected by the gate: {100 * gate['ood_reject_rate']:.2f}%", ""]
    return "\n".join(lines)


def ablate(cfg: ExperimentConfig, out: Path) -> list[tuple[str, dict[str, float]]]:
    """Pooled OOD metrics using only the IPs of the first 1, 2, 3 and 4 PP layers."""
    ws = Workspace(out)
    ckpt = _load_ip(ws, cfg, calibrated=True)
    data = _collect(ws, ckpt)
    mode = ckpt.score_mode
    normalizer = ScoreNormalizer.from_errors(data.cal_errors)
    results = []
    for label, ips in ABLATION_ROWS:
        cal_scores = score_errors(data.cal_errors, normalizer, mode, ips)
        th = calibrate_threshold(cal_scores, cfg.detection.target_tpr)
        pops = ScoredPopulations(score_errors(data.id_errors, normalizer, mode, ips),
                                 score_errors(data.ood_errors, normalizer, mode, ips))
        rep = ood_report(pops, cfg.evaluation.fpr_target_tpr)
        rep["tau"] = th.tau
        results.append((label, rep))
    _write_csv(ws.root / "ablation.csv", ["ips_at"] + list(METRIC_COLUMNS),
               [[label] + [_fmt(r[c]) for c in METRIC_COLUMNS] for label, r in results])
    lines = ["IP ablation, pooled test metrics (values in %)", "",
             f"{'IPs at':<15}" + "".join(f"{c:>10}" for c in METRIC_COLUMNS)]
    for label, r in results:
        lines.append(f"{label:<15}" + "".join(f"{100 * r[c]:>10.2f}" for c in METRIC_COLUMNS))
    fio.atomic_write_text(ws.root / "ablation.txt", "\n".join(lines) + "\n")
    return results


def predict(cfg: ExperimentConfig, out: Path, input_path: Path) -> dict:
    """Decision for the newest eight frames of a raw-frame container [frames, rx, chirps, samples]."""
    ws = Workspace(out)
    ckpt = _load_ip(ws, cfg, calibrated=True)
    frames = fio.read_container(input_path)
    r = cfg.radar
    if frames.ndim != 4 or frames.shape[1:] != (r.num_rx, r.chirps_per_frame, r.samples_per_chirp):
        raise ValueError(f"input must be [frames, {r.num_rx}, {r.chirps_per_frame}, {r.samples_per_chirp}],"
                         f" got {frames.shape}")
    if frames.shape[0] < MICRO_FRAMES:
        raise ValueError(f"input needs at least {MICRO_FRAMES} frames, got {frames.shape[0]}")
    window = frames[-MICRO_FRAMES:].astype(np.complex128)
    p = cfg.preprocessing
    # round-trip through float32 so predictions match the stored feature pipeline
    rdi = build_rdi(window[-1], r, p.enhancement).magnitudes.astype(np.float32).astype(np.float64)
    micro = build_micro_rdi(list(window), r, p.sinc_cutoff, p.sinc_taps, p.enhancement)
    micro = micro.magnitudes.astype(np.float32).astype(np.float64)
    emb, err = forward_stats(ckpt.model, rdi[None], micro[None])
    score = score_errors(err, ckpt.normalizer, ckpt.score_mode)
    decision = decide(score, emb, ckpt.threshold, ckpt.knn, ckpt.classes)[0]
    record = decision.to_record() | {"tau": ckpt.threshold.tau, "input": str(input_path)}
    fio.atomic_write_text(ws.root / "decision.json", json.dumps(record, sort_keys=True) + "\n")
    return record
