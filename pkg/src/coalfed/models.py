"""Datasets and small deterministic trainable models (linear, polynomial,
MLP) with flat-weight access for fusion.

Training rows are canonically ordered (sorted by feature tuple, then label)
before every fit so that results do not depend on the order in which data
arrived from partners.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ArchMismatchError, EmptyDataError, SchemaError


@dataclass(frozen=True)
class Schema:
    """Field names plus either a class-label set or a numeric label range."""

    fields: tuple
    labels: tuple | None = None          # class names, classification only
    label_range: tuple | None = None     # (lo, hi), regression only

    @property
    def is_classification(self):
        return self.labels is not None

    def to_dict(self):
        return {
            "fields": list(self.fields),
            "labels": list(self.labels) if self.labels is not None else None,
            "label_range": list(self.label_range) if self.label_range is not None else None,
        }

    @staticmethod
    def from_dict(d):
        return Schema(
            tuple(d["fields"]),
            tuple(d["labels"]) if d.get("labels") is not None else None,
            tuple(d["label_range"]) if d.get("label_range") is not None else None,
        )


@dataclass
class Dataset:
    schema: Schema
    features: np.ndarray                 # (N, d) float64
    labels: np.ndarray                   # (N,) float64 or object (class names)
    provenance: list = field(default_factory=list)   # (partner_id, original_row)
    noise_marks: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        if self.features.size == 0:
            self.features = self.features.reshape(0, len(self.schema.fields))
        self.labels = np.asarray(self.labels)
        if self.features.shape[0] != self.labels.shape[0]:
            raise SchemaError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")
        if self.features.shape[1] != len(self.schema.fields):
            raise SchemaError(
                f"{self.features.shape[1]} feature columns but "
                f"{len(self.schema.fields)} schema fields")
        if not self.provenance:
            self.provenance = [(None, i) for i in range(len(self))]

    def __len__(self):
        return self.features.shape[0]

    def canonicalized(self) -> "Dataset":
        """Rows sorted by (feature tuple, label); provenance follows."""
        order = sorted(range(len(self)),
                       key=lambda i: (tuple(self.features[i]), str(self.labels[i])))
        idx = np.asarray(order, dtype=np.intp)
        return Dataset(
            self.schema,
            self.features[idx],
            self.labels[idx],
            [self.provenance[i] for i in order],
            self.noise_marks[idx] if self.noise_marks is not None else None,
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(
            self.schema,
            self.features[idx],
            self.labels[idx],
            [self.provenance[i] for i in idx],
            self.noise_marks[idx] if self.noise_marks is not None else None,
        )

    def with_provenance(self, partner_id) -> "Dataset":
        return replace(self, provenance=[(partner_id, i) for i in range(len(self))])


def empty_dataset(schema: Schema) -> Dataset:
    label_dtype = object if schema.is_classification else np.float64
    return Dataset(schema, np.zeros((0, len(schema.fields))),
                   np.zeros(0, dtype=label_dtype), [])


@dataclass(frozen=True)
class ModelArch:
    """Architecture descriptor; the fingerprint keys weight compatibility.

    ``feature_offset``/``feature_scale`` give a fixed affine map applied to
    each input before (polynomial) expansion, so partners share the exact
    feature mapping and their weights stay averageable.
    """

    kind: str                            # linear | polynomial | mlp
    input_dim: int
    degree: int = 1
    hidden: tuple = ()
    classes: tuple | None = None         # None -> regression
    feature_offset: tuple | None = None
    feature_scale: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "polynomial", "mlp"):
            raise ArchMismatchError(f"unknown arch kind {self.kind!r}")
        if self.degree < 1:
            raise ArchMismatchError("degree must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ArchMismatchError("hidden sizes must be >= 1")

    @property
    def output_dim(self):
        return 1 if self.classes is None else len(self.classes)

    @property
    def expanded_dim(self):
        deg = self.degree if self.kind == "polynomial" else 1
        return self.input_dim * deg

    @property
    def sizes(self):
        return [self.expanded_dim, *self.hidden, self.output_dim]

    @property
    def output_kind(self):
        return kernels.OUTPUT_SOFTMAX if self.classes is not None else kernels.OUTPUT_LINEAR

    def to_dict(self):
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "degree": self.degree,
            "hidden": list(self.hidden),
            "classes": list(self.classes) if self.classes is not None else None,
            "feature_offset": list(self.feature_offset) if self.feature_offset else None,
            "feature_scale": list(self.feature_scale) if self.feature_scale else None,
        }

    @staticmethod
    def from_dict(d):
        return ModelArch(
            d["kind"], d["input_dim"], d.get("degree", 1),
            tuple(d.get("hidden") or ()),
            tuple(d["classes"]) if d.get("classes") is not None else None,
            tuple(d["feature_offset"]) if d.get("feature_offset") else None,
            tuple(d["feature_scale"]) if d.get("feature_scale") else None,
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def expand(self, X) -> np.ndarray:
        """Affine-map then polynomial-expand raw features."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise ArchMismatchError(
                f"expected {self.input_dim} input dims, got {X.shape[1]}")
        if self.feature_offset is not None:
            X = X - np.asarray(self.feature_offset)
        if self.feature_scale is not None:
            X = X / np.asarray(self.feature_scale)
        if self.kind != "polynomial" or self.degree == 1:
            return np.ascontiguousarray(X)
        cols = [X ** p for p in range(1, self.degree + 1)]
        return np.ascontiguousarray(np.hstack(cols))


@dataclass(frozen=True)
class ModelWeights:
    arch_fingerprint: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values",
                           np.ascontiguousarray(self.values, dtype=np.float64))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 0                  # 0 -> full batch
    seed: int = 0
    optimizer: str = "full_batch_gd"     # or minibatch_sgd
    loss: str = "mse"                    # or cross_entropy

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_dict(self):
        return {"learning_rate": self.learning_rate, "epochs": self.epochs,
                "batch_size": self.batch_size, "seed": self.seed,
                "optimizer": self.optimizer, "loss": self.loss}


class Model:
    """Immutable trained model: architecture + flat weight vector."""

    def __init__(self, arch: ModelArch, weights: np.ndarray):
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        expected = kernels.weight_count(arch.sizes)
        if weights.shape != (expected,):
            raise ArchMismatchError(
                f"weight vector length {weights.shape} != {expected} for arch")
        self.arch = arch
        self._w = weights
        self._w.setflags(write=False)

    def raw_output(self, X) -> np.ndarray:
        X = self.arch.expand(X)
        return kernels.forward(X, self.arch.sizes, self._w, self.arch.output_kind)

    def predict(self, x):
        """Single feature vector -> label value or class name (lowest-index
        tie-break on equal class scores)."""
        out = self.raw_output(np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]
        if self.arch.classes is not None:
            return self.arch.classes[int(np.argmax(out))]
        return float(out[0]) if out.shape == (1,) else out

    def predict_batch(self, X):
        out = self.raw_output(X)
        if self.arch.classes is not None:
            idx = np.argmax(out, axis=1)
            return np.asarray([self.arch.classes[i] for i in idx], dtype=object)
        return out[:, 0] if out.shape[1] == 1 else out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.arch.fingerprint().encode())
        h.update(self._w.tobytes())
        return h.hexdigest()


def get_weights(model: Model) -> ModelWeights:
    return ModelWeights(model.arch.fingerprint(), model._w.copy())


def set_weights(model: Model, w: ModelWeights) -> Model:
    if w.arch_fingerprint != model.arch.fingerprint():
        raise ArchMismatchError("weights fingerprint does not match architecture")
    return Model(model.arch, w.values.copy())


def _targets(arch: ModelArch, data: Dataset) -> np.ndarray:
    if arch.classes is not None:
        index = {c: i for i, c in enumerate(arch.classes)}
        Y = np.zeros((len(data), len(arch.classes)))
        for r, lab in enumerate(data.labels):
            if lab not in index:
                raise SchemaError(f"label {lab!r} not among arch classes")
            Y[r, index[lab]] = 1.0
        return Y
    return np.asarray(data.labels, dtype=np.float64).reshape(-1, 1)


def _steps_for(cfg: TrainConfig, n: int):
    """(total update steps, batch size) for the kernel call."""
    if cfg.optimizer == "full_batch_gd" or cfg.batch_size <= 0 or cfg.batch_size >= n:
        return cfg.epochs, 0
    return cfg.epochs * math.ceil(n / cfg.batch_size), cfg.batch_size


def train(arch: ModelArch, data: Dataset, cfg: TrainConfig,
          init: ModelWeights | None = None) -> Model:
    """Deterministic fit: same (arch, canonical data, cfg, init) gives
    bit-identical weights on a given kernel backend."""
    if len(data) == 0:
        raise EmptyDataError("cannot train on an empty dataset")
    if (arch.classes is None) != (cfg.loss == "mse"):
        raise ArchMismatchError("loss must be mse for regression, cross_entropy for classes")
    data = data.canonicalized()
    X = arch.expand(data.features)
    Y = _targets(arch, data)
    if init is not None:
        if init.arch_fingerprint != arch.fingerprint():
            raise ArchMismatchError("init weights do not match architecture")
        w = init.values.copy()
    else:
        w = kernels.init_weights(arch.sizes, cfg.seed)
    steps, batch = _steps_for(cfg, len(data))
    kernels.train_steps(X, Y, arch.sizes, w, cfg.learning_rate, steps, batch,
                        cfg.seed, arch.output_kind)
    return Model(arch, w)


def run_steps(arch: ModelArch, weights: np.ndarray, data: Dataset, cfg: TrainConfig,
              n_steps: int, stream_seed: int) -> np.ndarray:
    """Run a fixed number of gradient steps from given weights (one
    federation round's local work).  Returns a new weight vector."""
    if len(data) == 0:
        raise EmptyDataError("cannot train on an empty dataset")
    data = data.canonicalized()
    X = arch.expand(data.features)
    Y = _targets(arch, data)
    w = np.array(weights, dtype=np.float64)
    _, batch = _steps_for(cfg, len(data))
    kernels.train_steps(X, Y, arch.sizes, w, cfg.learning_rate, n_steps, batch,
                        stream_seed, arch.output_kind)
    return w


@dataclass(frozen=True)
class AnalysisTask:
    """A deterministic training task: same data and seed, same model."""

    arch: ModelArch
    train_config: TrainConfig

    def fit(self, data: Dataset) -> Model:
        return train(self.arch, data, self.train_config)


def evaluate(model: Model, data: Dataset, metric: str) -> float:
    if len(data) == 0:
        raise EmptyDataError("cannot evaluate on an empty dataset")
    pred = model.predict_batch(data.features)
    if metric == "mse":
        y = np.asarray(data.labels, dtype=np.float64)
        return float(np.mean((pred - y) ** 2))
    if metric == "accuracy":
        return float(np.mean([p == t for p, t in zip(pred, data.labels)]))
    raise ValueError(f"unknown metric {metric!r}")


def training_loss(model: Model, data: Dataset) -> float:
    """MSE as optimized by the kernel (summed over output dims)."""
    data = data.canonicalized()
    out = model.raw_output(data.features)
    Y = _targets(model.arch, data)
    return float(np.mean(np.sum((out - Y) ** 2, axis=1)))


# --- model file format: text header + one weight per line ------------------

def save_model(model: Model, fp) -> None:
    """`arch <json>` line, `n <count>` line, then decimal weights one per
    line.  repr() round-trips float64 exactly, so identical models produce
    identical bytes."""
    close = False
    if isinstance(fp, str):
        fp, close = open(fp, "w", encoding="utf-8"), True
    try:
        fp.write("arch " + json.dumps(model.arch.to_dict(), sort_keys=True) + "\n")
        fp.write(f"n {model._w.shape[0]}\n")
        for v in model._w:
            fp.write(repr(float(v)) + "\n")
    finally:
        if close:
            fp.close()


def load_model(fp) -> Model:
    close = False
    if isinstance(fp, str):
        fp, close = open(fp, "r", encoding="utf-8"), True
    try:
        header = fp.readline()
        if not header.startswith("arch "):
            raise SchemaError("model file missing arch header")
        arch = ModelArch.from_dict(json.loads(header[5:]))
        count_line = fp.readline()
        if not count_line.startswith("n "):
            raise SchemaError("model file missing weight count")
        n = int(count_line[2:])
        w = np.asarray([float(fp.readline()) for _ in range(n)])
        return Model(arch, w)
    finally:
        if close:
            fp.close()


def model_to_bytes(model: Model) -> bytes:
    buf = io.StringIO()
    save_model(model, buf)
    return buf.getvalue().encode()


def model_from_bytes(blob: bytes) -> Model:
    return load_model(io.StringIO(blob.decode()))
