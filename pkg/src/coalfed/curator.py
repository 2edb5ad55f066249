"""Data-sharing-mode curation: apply generated policies to offered
datasets (format translation, relabeling, dedup, QoI/VoI gating) and merge
the survivors into one consolidated dataset.

Acceptance is whole-offer; a curator instance owns its consolidated
dataset and serializes ingest calls (single writer).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import infometrics, policy as policy_mod
from .bounds import PartnerDataStats
from .errors import SchemaError, UnresolvableFormatError
from .models import Dataset, Schema, empty_dataset

DEFAULT_EPSILON = 1e-9


@dataclass(frozen=True)
class DataOffer:
    source: str
    declared_format: str
    dataset: Dataset
    declared_stats: PartnerDataStats

    def __post_init__(self):
        if self.declared_stats.q != len(self.dataset):
            raise SchemaError("declared_stats.q must equal the dataset row count")


@dataclass
class DedupReport:
    incoming_rows: int
    duplicate_rows: int
    union_size_after: int


@dataclass
class CurationResult:
    accepted: bool
    transformed: Dataset | None
    report: dict


def _labels_match(a, b, epsilon):
    try:
        return abs(float(a) - float(b)) <= epsilon
    except (TypeError, ValueError):
        return a == b


def dedup(current: Dataset, incoming: Dataset, epsilon: float = DEFAULT_EPSILON):
    """Count incoming rows already present (features within epsilon per
    coordinate and matching label) in the current set or earlier in the
    incoming set.  Returns (DedupReport, novel row indices)."""
    cur = current.features
    cur_labels = list(current.labels)
    kept_rows = []
    kept_labels = []
    novel = []
    for i in range(len(incoming)):
        row = incoming.features[i]
        lab = incoming.labels[i]
        dup = False
        if cur.shape[0]:
            close = np.all(np.abs(cur - row) <= epsilon, axis=1)
            for j in np.nonzero(close)[0]:
                if _labels_match(cur_labels[j], lab, epsilon):
                    dup = True
                    break
        if not dup:
            for r, l in zip(kept_rows, kept_labels):
                if np.all(np.abs(r - row) <= epsilon) and _labels_match(l, lab, epsilon):
                    dup = True
                    break
        if dup:
            continue
        kept_rows.append(row)
        kept_labels.append(lab)
        novel.append(i)
    dup_count = len(incoming) - len(novel)
    report = DedupReport(len(incoming), dup_count, len(current) + len(incoming) - dup_count)
    return report, novel


def merge(current: Dataset, accepted, epsilon: float = DEFAULT_EPSILON) -> Dataset:
    """Union of current and the accepted datasets, duplicates removed,
    canonically ordered, provenance preserved."""
    out = current
    for ds in accepted:
        _, novel = dedup(out, ds, epsilon)
        if not novel:
            continue
        add = ds.subset(novel)
        out = Dataset(
            out.schema,
            np.vstack([out.features, add.features]) if len(out) else add.features,
            np.concatenate([np.asarray(out.labels), np.asarray(add.labels)])
            if len(out) else add.labels,
            list(out.provenance) + list(add.provenance),
        )
    return out.canonicalized()


class Curator:
    """Stateful aggregator/filter for one consolidation site."""

    def __init__(self, canonical_schema: Schema, policies, guidance,
                 canonical_format: str = "canonical", helpers=None,
                 truth=None, task=None, epsilon: float = DEFAULT_EPSILON,
                 trust=None, info_metric=None, decision_metric=None):
        self.canonical_schema = canonical_schema
        self.canonical_format = canonical_format
        self.policies = list(policies)
        self.guidance = guidance
        self.helpers = dict(helpers or {})
        self.truth = truth
        self.task = task
        self.epsilon = epsilon
        self.trust = dict(trust or {})           # partner id -> trustworthiness
        self.info_metric = info_metric or infometrics.InfoDistance()
        self.decision_metric = decision_metric or infometrics.DecisionDistance()
        self.consolidated = empty_dataset(canonical_schema)

    # -- transforms --------------------------------------------------------

    def _apply_transforms(self, offer: DataOffer):
        subject = {"source-name": offer.source, "source-format": offer.declared_format}
        decision = policy_mod.evaluate(self.policies, subject)
        data = offer.dataset
        fmt = offer.declared_format
        applied = []

        for p in decision.transforms:
            if p.action.kind != policy_mod.INVOKE_HELPER:
                continue
            helper = self.helpers.get(p.action.arg, lambda d: d)
            data = helper(data)
            fmt = self.canonical_format
            applied.append(p)
        if fmt != self.canonical_format:
            raise UnresolvableFormatError(
                f"no helper service translates format {fmt!r} of {offer.source!r}")

        # relabel/rename conditions on label-name/field-name pick out the
        # name being rewritten rather than describing the offer, so match
        # only the source-scoped conditions here
        label_map = {}
        field_map = {}
        for p in self.policies:
            if p.action.kind not in (policy_mod.RELABEL, policy_mod.RENAME_FIELD):
                continue
            scoped = [c for c in p.conditions
                      if c.attribute not in ("label-name", "field-name")]
            if not all(policy_mod._matches(c, subject) for c in scoped):
                continue
            if p.action.kind == policy_mod.RELABEL:
                src = p.condition_value("label-name")
                if src is not None and src in set(data.labels):
                    label_map[src] = p.action.arg
                    applied.append(p)
            else:
                src = p.condition_value("field-name")
                if src is not None and src in data.schema.fields:
                    field_map[src] = p.action.arg
                    applied.append(p)
        if label_map or field_map:
            from .datagen import lexicon_perturb
            data = lexicon_perturb(data, label_map, field_map)

        canon = self.canonical_schema
        if tuple(data.schema.fields) != tuple(canon.fields):
            raise SchemaError(
                f"fields {data.schema.fields} still differ from canonical "
                f"{canon.fields} after transforms")
        if canon.is_classification:
            extra = set(data.labels) - set(canon.labels)
            if extra:
                raise SchemaError(f"labels {sorted(extra)} not in canonical label set")
            data = Dataset(canon, data.features, data.labels,
                           list(data.provenance), data.noise_marks)
        else:
            data = Dataset(canon, data.features,
                           np.asarray(data.labels, dtype=np.float64),
                           list(data.provenance), data.noise_marks)
        return data.with_provenance(offer.source), applied

    # -- pipeline ----------------------------------------------------------

    def ingest(self, offer: DataOffer) -> CurationResult:
        """Fixed pipeline: transforms, dedup, QoI/VoI, terminal policies.
        On acceptance the consolidated dataset is updated in place."""
        data, applied = self._apply_transforms(offer)

        report, novel = dedup(self.consolidated, data, self.epsilon)
        novel_data = data.subset(novel)

        qoi_distance = qoi_score = None
        if self.truth is not None:
            qoi_distance, qoi_score = infometrics.qoi(data, self.truth, self.info_metric)

        if len(novel_data) == 0:
            voi_value = 0.0
        elif self.task is not None and len(self.consolidated) > 0:
            voi_value = infometrics.voi(novel_data, self.consolidated, self.task,
                                        self.decision_metric)
        else:
            voi_value = None    # bootstrap or no task: gate passes

        subject = {
            "source-name": offer.source,
            "source-format": self.canonical_format,
            "source-trustworthiness": self.trust.get(offer.source, 1.0),
            "data-qoi": qoi_score if qoi_score is not None else math.inf,
            "data-voi": voi_value if voi_value is not None else math.inf,
        }
        uniq = set(data.labels)
        if len(uniq) == 1:
            subject["label"] = next(iter(uniq))
        decision = policy_mod.evaluate(self.policies, subject)

        accepted = decision.terminal == policy_mod.ACCEPT
        reason = None
        if not accepted:
            if decision.terminal == policy_mod.REJECT:
                reason = "rejected-by-policy"
            elif qoi_score is not None and qoi_score <= self.guidance.qoi_threshold:
                reason = "qoi-below-threshold"
            elif voi_value is not None and voi_value <= self.guidance.voi_threshold:
                reason = "voi-below-threshold"
            else:
                reason = "no-acceptance-policy"

        result_report = {
            "qoi": None if qoi_score is None else {"distance": qoi_distance,
                                                   "score": qoi_score},
            "voi": voi_value,
            "dedup": report,
            "applied_policies": [policy_mod.serialize_policy(p) for p in applied],
            "rejection_reason": reason,
        }
        if accepted:
            self.consolidated = merge(self.consolidated, [novel_data], self.epsilon)
            return CurationResult(True, data, result_report)
        return CurationResult(False, None, result_report)


# --- dataset CSV format (curator external interface) -----------------------

def save_dataset_csv(data: Dataset, path: str, provenance_path: str | None = None):
    """Header = field names + "label"; '.' decimal separator; optional
    provenance sidecar maps row index to partner id."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.schema.fields) + ["label"])
        for i in range(len(data)):
            lab = data.labels[i]
            lab = repr(float(lab)) if not data.schema.is_classification else str(lab)
            w.writerow([repr(float(v)) for v in data.features[i]] + [lab])
    if provenance_path:
        prov = {str(i): p[0] for i, p in enumerate(data.provenance)}
        with open(provenance_path, "w", encoding="utf-8") as fh:
            json.dump(prov, fh, indent=0, sort_keys=True)


def load_dataset_csv(path: str, schema: Schema | None = None,
                     provenance_path: str | None = None) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label":
        raise SchemaError("dataset CSV must end its header with 'label'")
    fields = tuple(rows[0][:-1])
    feats, labels = [], []
    for r in rows[1:]:
        feats.append([float(v) for v in r[:-1]])
        labels.append(r[-1])
    classification = (schema.is_classification if schema is not None
                      else not all(_is_float(l) for l in labels))
    if classification:
        lab_arr = np.asarray(labels, dtype=object)
        sch = schema or Schema(fields, tuple(sorted(set(labels))), None)
    else:
        lab_arr = np.asarray([float(l) for l in labels])
        sch = schema or Schema(fields, None,
                               (float(lab_arr.min()), float(lab_arr.max()))
                               if len(lab_arr) else None)
    prov = []
    if provenance_path:
        with open(provenance_path, encoding="utf-8") as fh:
            m = json.load(fh)
        prov = [(m.get(str(i)), i) for i in range(len(labels))]
    return Dataset(sch, np.asarray(feats, dtype=np.float64).reshape(len(labels), len(fields)),
                   lab_arr, prov)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False
