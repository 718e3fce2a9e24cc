"""Config-driven training runs, evaluation, the entropic-scale sweep and CSV reports.

A run directory ``<output_dir>/<run_id>/`` holds ``checkpoint.txt`` and
``record.json``; :func:`write_report` aggregates records into
``metrics.csv`` and ``curves.csv``.
"""

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from isomax_lab import datasets as ds
from isomax_lab.errors import DimensionError, NonFiniteError, ValidationError
from isomax_lab.loss_heads import (
    IsoMaxHead,
    SoftMaxHead,
    head_grad_list,
    head_loss,
    predict,
)
from isomax_lab.ood_metrics import DetectionReport, detection_report
from isomax_lab.scores import mean_entropy, score_batch
from isomax_lab.tensor_nn import DenseLayer, FeatureExtractor, SgdConfig, lr_at_epoch, sgd_step

log = logging.getLogger(__name__)

HEADS = ("softmax", "isomax")
SCORE_NAMES = ("entropic", "mps")
CHECKPOINT_MAGIC = "isomax-lab-checkpoint"
CHECKPOINT_VERSION = 1

METRICS_COLUMNS = [
    "run_id", "head", "entropic_scale", "score", "in_data", "out_data",
    "test_accuracy", "mean_entropy", "tnr_at_tpr95", "auroc", "dtacc",
]
CURVES_COLUMNS = [
    "run_id", "epoch", "train_loss", "train_acc", "test_acc",
    "train_entropy", "inference_entropy",
]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _int_list(text):
    text = str(text).strip()
    return tuple(int(t) for t in text.split(",") if t.strip()) if text else ()


def _float_list(text):
    text = str(text).strip()
    return tuple(float(t) for t in text.split(",") if t.strip()) if text else ()


@dataclass
class ExperimentConfig:
    run_id: str = "run"
    head: str = "isomax"
    entropic_scale: float = 10.0
    loss_path: str = ""
    # model
    hidden_dims: Tuple[int, ...] = (64, 64)
    feature_dim: int = 16
    # optimisation
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_epochs: Tuple[int, ...] = (15, 20, 25)
    decay_factor: float = 10.0
    seed: int = 0
    output_dir: str = "runs"
    # data
    dataset: str = "blobs"
    num_classes: int = 4
    dim: int = 8
    cluster_radius: float = 4.0
    cluster_sigma: float = 0.5
    samples_per_class: int = 500
    test_samples_per_class: int = 250
    ring_radii: Tuple[float, ...] = (12.0,)
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    idx_in_classes: Tuple[int, ...] = ()
    idx_ood_images: str = ""
    idx_ood_labels: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.head not in HEADS:
            raise ValidationError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValidationError("epochs and batch_size must be positive")
        if self.head == "isomax" and not self.entropic_scale > 0:
            raise ValidationError("entropic_scale must be positive for the isomax head")
        if self.loss_path not in ("", "sequential", "fused"):
            raise ValidationError(f"unknown loss_path {self.loss_path!r}")
        if self.dataset not in ("blobs", "idx"):
            raise ValidationError(f"unknown dataset {self.dataset!r}")
        if self.feature_dim <= 0 or any(h <= 0 for h in self.hidden_dims):
            raise ValidationError("layer sizes must be positive")
        self.sgd()

    def sgd(self) -> SgdConfig:
        return SgdConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            decay_epochs=self.decay_epochs,
            decay_factor=self.decay_factor,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_CONVERTERS = {}
for _f in dataclasses.fields(ExperimentConfig):
    if _f.type in (int, "int"):
        _CONVERTERS[_f.name] = int
    elif _f.type in (float, "float"):
        _CONVERTERS[_f.name] = float
    elif _f.name in ("hidden_dims", "decay_epochs", "idx_in_classes"):
        _CONVERTERS[_f.name] = _int_list
    elif _f.name == "ring_radii":
        _CONVERTERS[_f.name] = _float_list
    else:
        _CONVERTERS[_f.name] = str


def parse_config(text: str, base_dir=None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors.

    Relative ``idx_*`` paths are resolved against ``base_dir`` when given.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONVERTERS:
            raise ValidationError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _CONVERTERS[key](value)
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: bad value for {key}: {exc}") from None
    if base_dir is not None:
        for key, value in values.items():
            if key.startswith("idx_") and isinstance(value, str) and value:
                if not Path(value).is_absolute():
                    values[key] = str(Path(base_dir) / value)
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


def format_config(config: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class DataBundle:
    train: ds.LabeledDataset
    test: ds.LabeledDataset
    ood_sets: Dict[str, ds.LabeledDataset]


def build_data(config: ExperimentConfig) -> DataBundle:
    if config.dataset == "blobs":
        spec = ds.BlobSpec(
            num_classes=config.num_classes,
            dim=config.dim,
            cluster_radius=config.cluster_radius,
            cluster_sigma=config.cluster_sigma,
            samples_per_class=config.samples_per_class,
            seed=config.seed,
        )
        test_spec = dataclasses.replace(
            spec, seed=config.seed + 1, samples_per_class=config.test_samples_per_class
        )
        train = ds.generate_blobs(spec, "blobs")
        test = ds.generate_blobs(test_spec, "blobs")
        ood = {}
        for k, radius in enumerate(config.ring_radii):
            ring_spec = dataclasses.replace(test_spec, seed=config.seed + 2 + k)
            ring = ds.generate_ood_ring(ring_spec, radius, num_samples=len(test))
            ood[ring.name] = ring
        return DataBundle(train, test, ood)

    for key in ("idx_train_images", "idx_train_labels", "idx_test_images", "idx_test_labels"):
        if not getattr(config, key):
            raise ValidationError(f"dataset = idx requires {key}")
    train_all = ds.load_idx(config.idx_train_images, config.idx_train_labels, "idx")
    test_all = ds.load_idx(config.idx_test_images, config.idx_test_labels, "idx")
    ood = {}
    if config.idx_in_classes:
        classes = config.idx_in_classes
        train = ds.select_classes(train_all, classes, "idx_in")
        test = ds.select_classes(test_all, classes, "idx_in")
        if set(np.unique(test_all.labels)) - set(classes):
            ood["idx_heldout"] = ds.exclude_classes(test_all, classes, "idx_heldout")
    else:
        num_classes = max(train_all.num_classes, test_all.num_classes)
        train = ds.LabeledDataset(train_all.inputs, train_all.labels, num_classes, "idx")
        test = ds.LabeledDataset(test_all.inputs, test_all.labels, num_classes, "idx")
    if config.idx_ood_images:
        other = ds.load_idx(config.idx_ood_images, config.idx_ood_labels, "idx_ood")
        ood["idx_ood"] = ds.LabeledDataset(other.inputs, np.zeros(len(other), np.int64), 1, "idx_ood")
    if not ood:
        raise ValidationError("IDX config yields no OOD set (set idx_in_classes or idx_ood_*)")
    return DataBundle(train, test, ood)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class Model:
    """Feature extractor plus one classifier head."""

    def __init__(self, extractor: FeatureExtractor, head):
        if extractor.feature_dim != head.feature_dim:
            raise DimensionError("head feature_dim does not match extractor output")
        self.extractor = extractor
        self.head = head

    @classmethod
    def build(cls, config: ExperimentConfig, in_dim: int, num_classes: int) -> "Model":
        # separate streams so both heads see the same extractor init and shuffles
        extractor = FeatureExtractor.build(
            in_dim, config.hidden_dims, config.feature_dim, np.random.default_rng([config.seed, 0])
        )
        if config.head == "isomax":
            head = IsoMaxHead.init(num_classes, config.feature_dim, config.entropic_scale)
        else:
            head = SoftMaxHead.init(num_classes, config.feature_dim, np.random.default_rng([config.seed, 1]))
        return cls(extractor, head)

    @property
    def in_dim(self) -> int:
        return self.extractor.in_dim

    def parameters(self) -> List[np.ndarray]:
        return self.extractor.parameters() + self.head.parameters()

    def parameter_names(self) -> List[str]:
        return self.extractor.parameter_names() + self.head.parameter_names()

    def decay_mask(self) -> List[bool]:
        mask = [name.endswith(".weights") for name in self.extractor.parameter_names()]
        return mask + self.head.decay_mask()

    def features(self, inputs) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.in_dim:
            raise ValidationError(f"model expects {self.in_dim}-dim inputs, got shape {inputs.shape}")
        return self.extractor.forward(inputs)

    def probabilities(self, inputs) -> np.ndarray:
        """Inference probabilities (entropic scale removed for IsoMax)."""
        return self.head.probabilities(self.features(inputs))

    def training_probabilities(self, inputs) -> np.ndarray:
        return self.head.training_probabilities(self.features(inputs))

    def predict(self, inputs) -> np.ndarray:
        return predict(self.head, self.features(inputs))


def save_checkpoint(model: Model, path) -> None:
    """Versioned text checkpoint; values are written as hexadecimal floats."""
    head = model.head
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", f"head {head.kind}"]
    if head.kind == "isomax":
        lines.append(f"meta entropic_scale {float(head.entropic_scale).hex()}")
    acts = ",".join(layer.activation for layer in model.extractor.layers)
    lines.append(f"meta activations {acts}")
    for name, arr in zip(model.parameter_names(), model.parameters()):
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"param {name} {shape}")
        rows = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr[None, :]
        for row in rows:
            lines.append(" ".join(float(v).hex() for v in row))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> Model:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].split()[:1] != [CHECKPOINT_MAGIC]:
        raise ValidationError(f"{path}: not an isomax-lab checkpoint")
    version = int(lines[0].split()[1])
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    kind = lines[1].split()[1]
    meta = {}
    params = {}
    i = 2
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "end":
            break
        if parts[0] == "meta":
            meta[parts[1]] = parts[2]
            i += 1
        elif parts[0] == "param":
            name = parts[1]
            shape = tuple(int(s) for s in parts[2].split(","))
            nrows = shape[0] if len(shape) > 1 else 1
            values = [float.fromhex(v) for row in lines[i + 1:i + 1 + nrows] for v in row.split()]
            params[name] = np.array(values, dtype=np.float64).reshape(shape)
            i += 1 + nrows
        else:
            raise ValidationError(f"{path}: unexpected line {i + 1}: {lines[i][:40]!r}")
    else:
        raise ValidationError(f"{path}: truncated checkpoint (no 'end' line)")
    acts = meta["activations"].split(",")
    layers = [
        DenseLayer(params[f"layer{k}.weights"], params[f"layer{k}.bias"], act)
        for k, act in enumerate(acts)
    ]
    extractor = FeatureExtractor(layers)
    if kind == "isomax":
        head = IsoMaxHead(params["head.prototypes"], float.fromhex(meta["entropic_scale"]))
    elif kind == "softmax":
        head = SoftMaxHead(params["head.weights"], params["head.biases"])
    else:
        raise ValidationError(f"{path}: unknown head {kind!r}")
    return Model(extractor, head)


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    train_entropy: float
    inference_entropy: float


@dataclass
class MetricEntry:
    score: str
    out_data: str
    report: DetectionReport


@dataclass
class RunRecord:
    run_id: str
    head: str
    entropic_scale: Optional[float]
    in_data: str
    initial_loss: float
    epochs: List[EpochStats]
    test_accuracy: float
    mean_entropy: float
    metrics: List[MetricEntry]
    # protocol choices that the headline numbers depend on
    optimizer: str = "sgd, plain (non-Nesterov) momentum"
    tnr_rule: str = "largest threshold with TPR >= 95%, no interpolation"
    loss_path: str = ""
    wall_seconds: float = field(default=0.0, compare=False)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        raw = json.loads(text)
        raw["epochs"] = [EpochStats(**e) for e in raw["epochs"]]
        raw["metrics"] = [
            MetricEntry(m["score"], m["out_data"], DetectionReport(**m["report"]))
            for m in raw["metrics"]
        ]
        return cls(**raw)


@dataclass
class EvalResult:
    score: str
    test_accuracy: float
    mean_entropy: float
    reports: Dict[str, DetectionReport]


def _batched(model: Model, fn, inputs, batch=4096):
    return np.concatenate([fn(inputs[i:i + batch]) for i in range(0, len(inputs), batch)])


def evaluate(model: Model, in_test: ds.LabeledDataset, ood_sets: Dict[str, ds.LabeledDataset], score: str) -> EvalResult:
    """Detection reports for every OOD set plus in-distribution test accuracy."""
    if score not in SCORE_NAMES:
        raise ValidationError(f"score must be one of {SCORE_NAMES}")
    for data in [in_test, *ood_sets.values()]:
        if data.in_dim != model.in_dim:
            raise ValidationError(
                f"dataset {data.name!r} has {data.in_dim}-dim inputs, checkpoint expects {model.in_dim}"
            )
    in_probs = _batched(model, model.probabilities, in_test.inputs)
    in_scores = score_batch(score, in_probs)
    accuracy = float(np.mean(np.argmax(in_probs, axis=1) == in_test.labels))
    reports = {}
    for name, ood in ood_sets.items():
        out_scores = score_batch(score, _batched(model, model.probabilities, ood.inputs))
        reports[name] = detection_report(in_scores, out_scores)
    return EvalResult(score, accuracy, mean_entropy(in_probs), reports)


def run_dir(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / config.run_id


def train(config: ExperimentConfig, data: Optional[DataBundle] = None, write: bool = True):
    """Train one model; returns ``(record, model)``.

    With ``write`` the checkpoint, record and the config are stored under
    ``<output_dir>/<run_id>/``.
    """
    start = time.perf_counter()
    data = data or build_data(config)
    train_set, test_set = data.train, data.test
    model = Model.build(config, train_set.in_dim, train_set.num_classes)
    sgd = config.sgd()
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    mask = model.decay_mask()
    path = config.loss_path or None
    shuffle_rng = np.random.default_rng([config.seed, 2])
    n = len(train_set)

    initial_loss = None
    history = []
    for epoch in range(config.epochs):
        lr = lr_at_epoch(sgd, epoch)
        order = shuffle_rng.permutation(n)
        losses, sizes = [], []
        for b, start_idx in enumerate(range(0, n, config.batch_size)):
            idx = order[start_idx:start_idx + config.batch_size]
            feats = model.extractor.forward(train_set.inputs[idx])
            result = head_loss(model.head, feats, train_set.labels[idx], path)
            if not math.isfinite(result.loss):
                raise NonFiniteError(f"non-finite loss at epoch {epoch} batch {b}")
            if initial_loss is None:
                initial_loss = result.loss
            ext_grads, _ = model.extractor.backward(result.grad_features)
            grads = ext_grads + head_grad_list(model.head, result)
            try:
                sgd_step(params, grads, velocity, sgd, lr=lr, decay_mask=mask)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch} batch {b}: {exc}") from None
            losses.append(result.loss)
            sizes.append(len(idx))
        train_probs = _batched(model, model.probabilities, train_set.inputs)
        stats = EpochStats(
            epoch=epoch,
            train_loss=float(np.average(losses, weights=sizes)),
            train_acc=float(np.mean(np.argmax(train_probs, axis=1) == train_set.labels)),
            test_acc=float(np.mean(model.predict(test_set.inputs) == test_set.labels)),
            train_entropy=mean_entropy(_batched(model, model.training_probabilities, train_set.inputs)),
            inference_entropy=mean_entropy(train_probs),
        )
        log.debug("%s epoch %d: %s", config.run_id, epoch, stats)
        history.append(stats)

    metrics = []
    test_accuracy = mean_ent = None
    for score in SCORE_NAMES:
        res = evaluate(model, test_set, data.ood_sets, score)
        test_accuracy, mean_ent = res.test_accuracy, res.mean_entropy
        for name, report in res.reports.items():
            metrics.append(MetricEntry(score, name, report))
    record = RunRecord(
        run_id=config.run_id,
        head=config.head,
        entropic_scale=config.entropic_scale if config.head == "isomax" else None,
        in_data=train_set.name,
        initial_loss=float(initial_loss),
        epochs=history,
        test_accuracy=test_accuracy,
        mean_entropy=mean_ent,
        metrics=metrics,
        loss_path=config.loss_path or ("sequential" if config.head == "isomax" else "fused"),
        wall_seconds=time.perf_counter() - start,
    )
    if write:
        out = run_dir(config)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out / "checkpoint.txt")
        (out / "record.json").write_text(record.to_json())
        (out / "config.txt").write_text(format_config(config))
    return record, model


def sweep(base_config: ExperimentConfig, entropic_scales: Sequence[float] = (1.0, 3.0, 10.0), write: bool = True):
    """One IsoMax run per entropic scale plus a SoftMax baseline on identical data/seed/schedule."""
    if base_config.head != "isomax":
        raise ValidationError("sweep requires head = isomax in the base config")
    if not entropic_scales:
        raise ValidationError("sweep needs at least one entropic scale")
    data = build_data(base_config)
    configs = [
        base_config.replace(run_id=f"{base_config.run_id}_isomax_es{s:g}", entropic_scale=float(s))
        for s in entropic_scales
    ]
    configs.append(base_config.replace(run_id=f"{base_config.run_id}_softmax", head="softmax"))
    records = [train(cfg, data=data, write=write)[0] for cfg in configs]
    if write:
        write_report(records, base_config.output_dir)
    return records


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def metrics_rows(records: Sequence[RunRecord]) -> List[List[str]]:
    rows = []
    for rec in records:
        for m in rec.metrics:
            rows.append([_fmt(v) for v in (
                rec.run_id, rec.head, rec.entropic_scale, m.score, rec.in_data, m.out_data,
                rec.test_accuracy, rec.mean_entropy,
                m.report.tnr_at_tpr95, m.report.auroc, m.report.dtacc,
            )])
    return rows


def curves_rows(records: Sequence[RunRecord]) -> List[List[str]]:
    rows = []
    for rec in records:
        for e in rec.epochs:
            rows.append([_fmt(v) for v in (
                rec.run_id, e.epoch, e.train_loss, e.train_acc, e.test_acc,
                e.train_entropy, e.inference_entropy,
            )])
    return rows


def write_report(records: Sequence[RunRecord], out_dir) -> Tuple[Path, Path]:
    if not records:
        raise ValidationError("no run records to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = out_dir / "metrics.csv", out_dir / "curves.csv"
    for p, header, rows in (
        (paths[0], METRICS_COLUMNS, metrics_rows(records)),
        (paths[1], CURVES_COLUMNS, curves_rows(records)),
    ):
        with open(p, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    return paths


def load_records(runs_dir) -> List[RunRecord]:
    runs_dir = Path(runs_dir)
    if not runs_dir.is_dir():
        raise ValidationError(f"{runs_dir} is not a directory")
    files = sorted(runs_dir.glob("*/record.json"))
    return [RunRecord.from_json(f.read_text()) for f in files]


def report(runs_dir) -> Tuple[Path, Path]:
    return write_report(load_records(runs_dir), runs_dir)
