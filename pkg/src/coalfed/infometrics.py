"""Quality-of-Information and Value-of-Information scoring.

QoI compares a dataset against a ground truth oracle in information space;
VoI measures how much a training task's output model moves when the new
data is added.  Both distance metrics are pluggable; the defaults are
label disagreement (QoI) and probe-set prediction disagreement (VoI).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from .errors import EmptyDataError, SchemaError
from .models import AnalysisTask  # noqa: F401  (re-exported for callers)


@dataclass(frozen=True)
class GroundTruth:
    """Labeling oracle over a feature-space domain.

    ``oracle`` maps one feature vector to the true label (class name or
    real value); ``domain`` is a per-axis (lo, hi) tuple.
    """

    oracle: object
    domain: tuple
    label_range: tuple | None = None     # regression label span, for tolerance

    def label(self, x):
        return self.oracle(np.asarray(x, dtype=np.float64))

    def labels_for(self, X):
        return [self.label(row) for row in np.atleast_2d(X)]


@dataclass(frozen=True)
class InfoDistance:
    kind: str = "label_disagreement"
    tolerance: float | None = None       # regression |y - oracle| tolerance
    fn: object | None = None             # custom distance(data, truth) -> float

    def __post_init__(self):
        if self.kind not in ("label_disagreement", "custom"):
            raise ValueError(f"unknown info distance {self.kind!r}")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom info distance needs fn")


@dataclass(frozen=True)
class DecisionDistance:
    kind: str = "probe_disagreement"
    probe_set: object | None = None      # Dataset; default: union features
    fn: object | None = None             # custom distance(model_a, model_b) -> float

    def __post_init__(self):
        if self.kind not in ("probe_disagreement", "weight_l2", "custom"):
            raise ValueError(f"unknown decision distance {self.kind!r}")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom decision distance needs fn")


def qoi(data, truth: GroundTruth, metric: InfoDistance = InfoDistance()):
    """(distance, score): distance is the disagreement rate against the
    oracle; score = 1 / (1 + distance) so higher means better quality."""
    if len(data) == 0:
        raise EmptyDataError("cannot score an empty dataset")
    if metric.kind == "custom":
        distance = float(metric.fn(data, truth))
    else:
        true_labels = truth.labels_for(data.features)
        if data.schema.is_classification:
            distance = float(np.mean(
                [d != t for d, t in zip(data.labels, true_labels)]))
        else:
            tol = metric.tolerance
            if tol is None:
                span = truth.label_range or data.schema.label_range
                if span is None:
                    y = np.asarray(true_labels, dtype=np.float64)
                    span = (float(y.min()), float(y.max()))
                tol = 0.05 * (span[1] - span[0])
            y = np.asarray(data.labels, dtype=np.float64)
            distance = float(np.mean(np.abs(y - np.asarray(true_labels)) > tol))
    return distance, 1.0 / (1.0 + distance)


def voi(new_data, existing, task, metric: DecisionDistance = DecisionDistance()):
    """Decision-space distance between the task model trained on the
    existing data and the one trained on existing + new (same seed)."""
    if len(new_data) == 0:
        return 0.0
    if tuple(new_data.schema.fields) != tuple(existing.schema.fields):
        raise SchemaError("new data fields do not match the existing schema; "
                          "run curator transforms first")
    base = task.fit(existing)
    combined = models.Dataset(
        existing.schema,
        np.vstack([existing.features, new_data.features]),
        np.concatenate([np.asarray(existing.labels), np.asarray(new_data.labels)]),
        list(existing.provenance) + list(new_data.provenance),
    )
    extended = task.fit(combined)
    return model_distance(extended, base, metric,
                          probe_features=combined.features)


def model_distance(model_a, model_b, metric: DecisionDistance,
                   probe_features=None) -> float:
    if metric.kind == "custom":
        return float(metric.fn(model_a, model_b))
    if metric.kind == "weight_l2":
        wa = models.get_weights(model_a).values
        wb = models.get_weights(model_b).values
        return float(np.linalg.norm(wa - wb))
    probe = metric.probe_set.features if metric.probe_set is not None else probe_features
    if probe is None or len(probe) == 0:
        raise EmptyDataError("probe disagreement needs a probe set")
    pa = model_a.predict_batch(probe)
    pb = model_b.predict_batch(probe)
    if model_a.arch.classes is not None:
        return float(np.mean([a != b for a, b in zip(pa, pb)]))
    return float(np.mean(np.abs(np.asarray(pa) - np.asarray(pb))))
