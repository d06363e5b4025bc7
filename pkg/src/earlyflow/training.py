"""Training loop, evaluation, prefix sweeps, and external dataset loading.

Splits are stratified 70/15/15 with a fixed seed. Training minimizes
class-weighted cross entropy on prefixes with Adam, stops early on validation
macro F1, and restores the best parameters. Every random draw (split order,
shuffling, dropout) descends from the one seed, so reruns are bit-identical.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import backward, cross_entropy, scale, zero_grad
from .earliness import BY_COUNT, BY_DURATION, PrefixSpec, aggregate_earliness, take_prefix
from .features import MtsSample
from .metrics import Metrics, compute_metrics
from .model import MdtConfig, MdtModel, forward


@dataclass
class Hyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 60
    patience: int = 10
    split: tuple = (0.70, 0.15, 0.15)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    val_macro_f1: float


@dataclass
class TrainResult:
    model: MdtModel
    history: list
    classes: tuple
    train_ids: list
    val_ids: list
    test_ids: list


@dataclass
class SweepPoint:
    spec: PrefixSpec
    mean_earliness: float
    mean_duration_earliness: float
    metrics: Metrics


class Adam:
    """Standard first-moment/second-moment update with bias correction."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def dataset_classes(samples) -> tuple:
    return tuple(sorted({s.label for s in samples}))


def stratified_split(samples, seed: int, fractions=(0.70, 0.15, 0.15)):
    """Deterministic per-class shuffle and allocation into train/val/test."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng([seed, 101])
    by_class = {}
    for i, s in enumerate(samples):
        by_class.setdefault(s.label, []).append(i)
    train, val, test = [], [], []
    for label in sorted(by_class):
        idx = np.array(by_class[label])
        rng.shuffle(idx)
        n = len(idx)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        n_train = min(n_train, n)
        n_val = min(n_val, n - n_train)
        train.extend(idx[:n_train])
        val.extend(idx[n_train:n_train + n_val])
        test.extend(idx[n_train + n_val:])
    return sorted(train), sorted(val), sorted(test)


def inverse_frequency_weights(labels, classes) -> np.ndarray:
    counts = np.array([max(1, sum(1 for y in labels if y == c)) for c in classes],
                      dtype=np.float64)
    return len(labels) / (len(classes) * counts)


def _prefix_arrays(samples, spec):
    prefixes, reports = [], []
    for s in samples:
        prefix, report = take_prefix(s, spec)
        prefixes.append(prefix.values)
        reports.append(report)
    return prefixes, reports


def train(model: MdtModel, samples, spec: PrefixSpec, hp: Hyperparams,
          seed: int = 42, verbose: bool = False) -> TrainResult:
    samples = list(samples)
    classes = dataset_classes(samples)
    if len(classes) != model.config.n_classes:
        raise ValueError(
            f"model expects {model.config.n_classes} classes, dataset has {len(classes)}")
    class_index = {c: i for i, c in enumerate(classes)}

    train_ids, val_ids, test_ids = stratified_split(samples, seed, hp.split)
    train_labels = [samples[i].label for i in train_ids]
    missing = [c for c in classes if c not in train_labels]
    if missing:
        raise ValueError(f"classes absent from training split: {missing}")

    prefixes, _ = _prefix_arrays(samples, spec)
    longest = max(p.shape[0] for p in prefixes)
    if longest > model.config.max_len:
        raise ValueError(
            f"longest prefix ({longest}) exceeds model max_len ({model.config.max_len})")

    weights = inverse_frequency_weights(train_labels, classes)
    params = model.parameters()
    optimizer = Adam(params, lr=hp.learning_rate)
    rng = np.random.default_rng([seed, 202])

    best_f1 = -1.0
    best_state = {k: v.copy() for k, v in model.state_arrays().items()}
    patience_left = hp.patience
    history = []

    for epoch in range(hp.max_epochs):
        order = np.array(train_ids)
        rng.shuffle(order)
        loss_sum = 0.0
        weight_sum = 0.0
        for start in range(0, len(order), hp.batch_size):
            batch = order[start:start + hp.batch_size]
            batch_w = sum(weights[class_index[samples[i].label]] for i in batch)
            zero_grad(params)
            for i in batch:
                target = class_index[samples[i].label]
                logits, _ = forward(model, prefixes[i], training=True, rng=rng)
                nll = cross_entropy(logits, target)
                w = weights[target]
                backward(scale(nll, w / batch_w))
                loss_sum += w * float(nll.data)
                weight_sum += w
            optimizer.step()

        val_preds = [classes[_argmax_prediction(model, prefixes[i])] for i in val_ids]
        val_f1 = compute_metrics(val_preds, [samples[i].label for i in val_ids],
                                 classes).macro_f1 if val_ids else 0.0
        epoch_loss = loss_sum / weight_sum if weight_sum else 0.0
        history.append(EpochStats(epoch=epoch, loss=epoch_loss, val_macro_f1=val_f1))
        if verbose:
            print(f"epoch {epoch}: loss {epoch_loss:.6f} val_macro_f1 {val_f1:.4f}")

        if val_f1 > best_f1:
            best_f1 = val_f1
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
            patience_left = hp.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break

    model.load_state(best_state)
    return TrainResult(model=model, history=history, classes=classes,
                       train_ids=train_ids, val_ids=val_ids, test_ids=test_ids)


def _argmax_prediction(model, prefix_values) -> int:
    logits, _ = forward(model, prefix_values, training=False)
    return int(np.argmax(logits.data))


def evaluate(model: MdtModel, samples, spec: PrefixSpec, classes):
    """Metrics plus mean earliness over the given samples."""
    samples = list(samples)
    if not samples:
        raise ValueError("nothing to evaluate")
    prefixes, reports = _prefix_arrays(samples, spec)
    predictions = [classes[_argmax_prediction(model, p)] for p in prefixes]
    metrics = compute_metrics(predictions, [s.label for s in samples], classes)
    mean_e, mean_de = aggregate_earliness(reports)
    return metrics, mean_e, mean_de


def _grid_spec(mode: str, value) -> PrefixSpec:
    if mode == BY_COUNT:
        return PrefixSpec.by_count(int(value))
    if mode == BY_DURATION:
        return PrefixSpec.by_duration(float(value))
    raise ValueError(f"unknown sweep mode {mode!r}")


def _run_sweep_point(args):
    config, samples, mode, value, hp, seed = args
    spec = _grid_spec(mode, value)
    model = MdtModel(config, seed=seed)
    result = train(model, samples, spec, hp, seed=seed)
    test_samples = [samples[i] for i in result.test_ids]
    metrics, mean_e, mean_de = evaluate(model, test_samples, spec, result.classes)
    return SweepPoint(spec=spec, mean_earliness=mean_e,
                      mean_duration_earliness=mean_de, metrics=metrics)


def sweep(config: MdtConfig, samples, mode: str, grid, hp: Hyperparams,
          seed: int = 42, jobs: int = 1) -> list:
    """Train and evaluate one fresh model per grid point; rows come back
    sorted by mean earliness."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty sweep grid")
    if mode == BY_COUNT:
        too_long = [v for v in grid if int(v) > config.max_len]
        if too_long:
            raise ValueError(f"grid points exceed max_len {config.max_len}: {too_long}")
    samples = list(samples)
    tasks = [(config, samples, mode, value, hp, seed) for value in grid]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_run_sweep_point, tasks))
    else:
        points = [_run_sweep_point(t) for t in tasks]
    points.sort(key=lambda p: (p.mean_earliness, p.mean_duration_earliness))
    return points


# ---------------------------------------------------------------------------
# CSV interfaces

def write_history_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "val_macro_f1"])
        for row in history:
            writer.writerow([row.epoch, f"{row.loss:.9f}", f"{row.val_macro_f1:.9f}"])


def sweep_rows(points):
    rows = [["prefix", "mean_e", "mean_de", "accuracy", "macro_f1", "detection_rate"]]
    for p in points:
        rows.append([
            p.spec.describe(),
            f"{p.mean_earliness:.9f}",
            f"{p.mean_duration_earliness:.9f}",
            f"{p.metrics.accuracy:.9f}",
            f"{p.metrics.macro_f1:.9f}",
            f"{p.metrics.detection_rate:.9f}",
        ])
    return rows


def write_sweep_csv(points, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(sweep_rows(points))


# ---------------------------------------------------------------------------
# external long-format datasets

EXPECT_PROFILES = {
    "ecg": {"d": 2, "max_len": 152},
    "wafer": {"d": 6, "max_len": 198},
}


class ExternalFormatError(Exception):
    pass


def load_external_mts(directory, expect: str | None = None) -> list:
    """Load a long-format series.csv plus flows.csv-style metadata carrying at
    least (series id, label). Timestamps come from a rel_ts column when
    present, otherwise unit spacing. d is inferred from the columns."""
    series_path = os.path.join(directory, "series.csv")
    meta_path = os.path.join(directory, "flows.csv")
    for path in (series_path, meta_path):
        if not os.path.exists(path):
            raise ExternalFormatError(f"missing file: {path}")

    labels = {}
    order = []
    with open(meta_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ExternalFormatError(f"{meta_path}: empty metadata")
        cols = {name: i for i, name in enumerate(header)}
        id_col = cols.get("flow_id", cols.get("series_id"))
        label_col = cols.get("label")
        if id_col is None or label_col is None:
            raise ExternalFormatError(
                f"{meta_path}: need flow_id/series_id and label columns")
        for row in reader:
            labels[row[id_col]] = row[label_col]
            order.append(row[id_col])

    with open(series_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3:
            raise ExternalFormatError(f"{series_path}: unusable header")
        if header[0] not in ("flow_id", "series_id") or header[1] != "seq_index":
            raise ExternalFormatError(
                f"{series_path}: header must start with flow_id/series_id,seq_index")
        has_rel_ts = header[-1] == "rel_ts"
        feature_cols = header[2:-1] if has_rel_ts else header[2:]
        d = len(feature_cols)
        if d < 1:
            raise ExternalFormatError(f"{series_path}: no feature columns")
        rows_by_id = {}
        for row in reader:
            if len(row) != len(header):
                raise ExternalFormatError(f"{series_path}: ragged row for {row[0]!r}")
            rows_by_id.setdefault(row[0], []).append(row)

    samples = []
    for sid in order:
        rows = rows_by_id.get(sid)
        if not rows:
            raise ExternalFormatError(f"{series_path}: no rows for {sid!r}")
        indices = [int(r[1]) for r in rows]
        if indices != list(range(len(rows))):
            raise ExternalFormatError(f"{sid}: seq_index not contiguous from 0")
        values = np.array([[float(v) for v in r[2:2 + d]] for r in rows])
        if has_rel_ts:
            ts = np.array([float(r[-1]) for r in rows])
        else:
            ts = np.arange(len(rows), dtype=np.float64)
        samples.append(MtsSample(flow_id=sid, values=values, timestamps=ts,
                                 label=labels[sid]))

    if expect is not None:
        profile = EXPECT_PROFILES.get(expect)
        if profile is None:
            raise ExternalFormatError(f"unknown expectation profile {expect!r}")
        max_len = max(s.length for s in samples)
        if d != profile["d"] or max_len > profile["max_len"]:
            raise ExternalFormatError(
                f"profile {expect}: expected d={profile['d']}, "
                f"max length <= {profile['max_len']}; got d={d}, max length {max_len}")
    return samples
