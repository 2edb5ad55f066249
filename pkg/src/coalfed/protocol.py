"""Fusion-session choreography: training-service and fusion-service state
machines exchanging typed messages over a deterministic simulated
transport.

Wire format: 4-byte big-endian length prefix followed by a UTF-8 JSON
object {kind, session_id, sender, seq, payload}.  The simulated transport
delivers messages in virtual-time order with (time, sender, seq) as the
total order, so a session transcript is reproducible byte for byte.
"""

from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import fusion as fusion_mod
from . import models as models_mod
from . import policy as policy_mod
from .errors import DeadlockError, SchemaError
from .models import Dataset, Model, ModelWeights, Schema

# message kinds
REGISTER = "Register"
CONFIGURE_TRAINING = "ConfigureTraining"
STATS_REPORT = "StatsReport"
CONTROL_CONFIG = "ControlConfig"
POLICY_REQUEST = "PolicyRequest"
POLICY_RESPONSE = "PolicyResponse"
DATA_SAMPLE_OFFER = "DataSampleOffer"
MODEL_UPDATE = "ModelUpdate"
FUSION_RESULT = "FusionResult"
VALIDATION_REPORT = "ValidationReport"
ERROR = "Error"

KINDS = (REGISTER, CONFIGURE_TRAINING, STATS_REPORT, CONTROL_CONFIG,
         POLICY_REQUEST, POLICY_RESPONSE, DATA_SAMPLE_OFFER, MODEL_UPDATE,
         FUSION_RESULT, VALIDATION_REPORT, ERROR)

FUSION_ID = "fusion"

# training-service phases
TS_IDLE = "Idle"
TS_CONFIGURED = "Configured"
TS_STATS_SENT = "StatsSent"
TS_CONTROL_RECEIVED = "ControlReceived"
TS_POLICIES_APPLIED = "PoliciesApplied"
TS_TRAINING = "Training"
TS_DONE = "Done"
TS_FAILED = "Failed"

# fusion-service phases
FS_WAITING = "Waiting"
FS_SESSION_CONFIGURED = "SessionConfigured"
FS_POLICIES_ISSUED = "PoliciesIssued"
FS_FUSING = "Fusing"
FS_VALIDATING = "Validating"
FS_COMPLETE = "Complete"

MODE_SYNC = "synchronized"
MODE_ASYNC = "asynchronous"


@dataclass(frozen=True)
class Message:
    kind: str
    session_id: str
    sender: str
    seq: int
    payload: dict = field(default_factory=dict)
    dest: str = ""          # routing only; not part of the wire object

    def to_dict(self):
        return {"kind": self.kind, "session_id": self.session_id,
                "sender": self.sender, "seq": self.seq, "payload": self.payload}


def encode_message(msg: Message) -> bytes:
    body = json.dumps(msg.to_dict(), sort_keys=True).encode()
    return struct.pack(">I", len(body)) + body


def decode_message(blob: bytes):
    """Decode one length-prefixed frame; returns (Message, bytes consumed)."""
    if len(blob) < 4:
        raise SchemaError("short frame: missing length prefix")
    (n,) = struct.unpack(">I", blob[:4])
    if len(blob) < 4 + n:
        raise SchemaError("short frame: truncated body")
    d = json.loads(blob[4:4 + n].decode())
    if d["kind"] not in KINDS:
        raise SchemaError(f"unknown message kind {d['kind']!r}")
    return Message(d["kind"], d["session_id"], d["sender"], d["seq"],
                   d.get("payload", {})), 4 + n


def dataset_to_payload(data: Dataset) -> dict:
    return {
        "schema": data.schema.to_dict(),
        "features": [[float(v) for v in row] for row in data.features],
        "labels": [lab if data.schema.is_classification else float(lab)
                   for lab in data.labels],
        "provenance": [[p[0], p[1]] for p in data.provenance],
    }


def dataset_from_payload(d: dict) -> Dataset:
    schema = Schema.from_dict(d["schema"])
    labels = (np.asarray(d["labels"], dtype=object) if schema.is_classification
              else np.asarray(d["labels"], dtype=np.float64))
    feats = np.asarray(d["features"], dtype=np.float64)
    if feats.size == 0:
        feats = feats.reshape(0, len(schema.fields))
    return Dataset(schema, feats, labels,
                   [(p[0], p[1]) for p in d.get("provenance", [])])


# --- training service ------------------------------------------------------

@dataclass(frozen=True)
class PartnerSpec:
    id: str
    dataset: Dataset
    declared_format: str = "canonical"
    trustworthiness: float = 1.0


class TrainingService:
    """One coalition partner's side of the session."""

    def __init__(self, spec: PartnerSpec, arch, cfg, session_id: str):
        self.id = spec.id
        self.data = spec.dataset
        self.declared_format = spec.declared_format
        self.trustworthiness = spec.trustworthiness
        self.arch = arch
        self.cfg = cfg
        self.session_id = session_id
        self.phase = TS_IDLE
        self._seq = 0
        self.control = None
        self.partner_index = None

    def _msg(self, kind, payload, dest=FUSION_ID):
        self._seq += 1
        return Message(kind, self.session_id, self.id, self._seq, payload, dest)

    def _fail(self, why):
        self.phase = TS_FAILED
        return [self._msg(ERROR, {"error": why, "phase": self.phase})]

    def _stats(self):
        ds = self.data
        hist = {}
        for lab in ds.labels:
            key = str(lab)
            hist[key] = hist.get(key, 0) + 1
        box = ([[float(v) for v in ds.features.min(axis=0)],
                [float(v) for v in ds.features.max(axis=0)]]
               if len(ds) else [[], []])
        return {
            "rows": len(ds),
            "label_histogram": hist,
            "fields": list(ds.schema.fields),
            "labels": (list(ds.schema.labels)
                       if ds.schema.is_classification else None),
            "declared_format": self.declared_format,
            "trustworthiness": self.trustworthiness,
            "feature_bounds": box,
        }

    def configure(self):
        """The Configure service call: report local statistics."""
        if self.phase != TS_IDLE:
            return self._fail(f"Configure while {self.phase}")
        self.phase = TS_CONFIGURED
        out = [self._msg(REGISTER, {"partner": self.id}),
               self._msg(STATS_REPORT, self._stats())]
        self.phase = TS_STATS_SENT
        return out

    def _apply_policies(self, policies_text):
        policies = policy_mod.parse_policy_file(policies_text)
        label_map, field_map = {}, {}
        for p in policies:
            src_name = p.condition_value("source-name")
            if src_name is not None and src_name != self.id:
                continue
            if p.action.kind == policy_mod.RELABEL:
                frm = p.condition_value("label-name")
                if frm is not None:
                    label_map[frm] = p.action.arg
            elif p.action.kind == policy_mod.RENAME_FIELD:
                frm = p.condition_value("field-name")
                if frm is not None:
                    field_map[frm] = p.action.arg
        if label_map or field_map:
            from .datagen import lexicon_perturb
            self.data = lexicon_perturb(self.data, label_map, field_map)

    def handle(self, msg: Message):
        if msg.kind == ERROR:
            self.phase = TS_FAILED
            return []
        if msg.kind == CONFIGURE_TRAINING:
            return self.configure()
        if msg.kind == CONTROL_CONFIG:
            if self.phase != TS_STATS_SENT:
                return self._fail(f"ControlConfig while {self.phase}")
            self.control = msg.payload
            self.partner_index = int(msg.payload["partner_index"])
            self.phase = TS_CONTROL_RECEIVED
            return [self._msg(POLICY_REQUEST, {"partner": self.id})]
        if msg.kind == POLICY_RESPONSE:
            if self.phase != TS_CONTROL_RECEIVED:
                return self._fail(f"PolicyResponse while {self.phase}")
            self._apply_policies(msg.payload.get("policies", ""))
            self.phase = TS_POLICIES_APPLIED
            out = []
            k = int(self.control.get("sample_k", 0))
            if k > 0:
                out.append(self._msg(DATA_SAMPLE_OFFER,
                                     {"samples": self._sample_offers(k)}))
            out.append(self._msg(MODEL_UPDATE, {"ready": True, "rows": len(self.data)}))
            return out
        if msg.kind == DATA_SAMPLE_OFFER:
            if self.phase not in (TS_POLICIES_APPLIED, TS_TRAINING):
                return self._fail(f"DataSampleOffer while {self.phase}")
            incoming = dataset_from_payload(msg.payload["dataset"])
            if len(incoming):
                self.data = Dataset(
                    self.data.schema,
                    np.vstack([self.data.features, incoming.features]),
                    np.concatenate([np.asarray(self.data.labels),
                                    np.asarray(incoming.labels)]),
                    list(self.data.provenance) + list(incoming.provenance))
            return []
        if msg.kind == MODEL_UPDATE:
            if self.phase not in (TS_POLICIES_APPLIED, TS_TRAINING):
                return self._fail(f"ModelUpdate while {self.phase}")
            self.phase = TS_TRAINING
            w = np.asarray(msg.payload["weights"], dtype=np.float64)
            round_idx = int(msg.payload["round"])
            if self.control.get("mode") == MODE_SYNC:
                steps = int(self.control["local_batches_per_round"])
                new_w = models_mod.run_steps(
                    self.arch, w, self.data, self.cfg, steps,
                    fusion_mod._round_seed(self.cfg.seed, self.partner_index,
                                           round_idx))
            else:
                model = models_mod.train(
                    self.arch, self.data, self.cfg,
                    init=ModelWeights(self.arch.fingerprint(), w))
                new_w = models_mod.get_weights(model).values
            return [self._msg(MODEL_UPDATE,
                              {"weights": [float(v) for v in new_w],
                               "rows": len(self.data), "round": round_idx})]
        if msg.kind in (FUSION_RESULT, VALIDATION_REPORT):
            if msg.kind == FUSION_RESULT:
                self.phase = TS_DONE
            return []
        return self._fail(f"{msg.kind} while {self.phase}")

    def _sample_offers(self, k):
        """Per-recipient donor samples, matching fusion.sample_exchange
        seeding: recipient i draws from donor j with seed (seed, i, j)."""
        seed = int(self.control.get("exchange_seed", 0))
        order = list(self.control["partner_order"])
        j = order.index(self.id)
        offers = {}
        for i, rid in enumerate(order):
            if rid == self.id or len(self.data) == 0:
                continue
            rng = np.random.default_rng(np.random.SeedSequence((seed, i, j)))
            take = min(k, len(self.data))
            idx = np.sort(rng.choice(len(self.data), size=take, replace=False))
            offers[rid] = dataset_to_payload(self.data.subset(idx))
        return offers


# --- fusion service --------------------------------------------------------

class FusionService:
    """The fusion server's side: policy generation, round orchestration,
    validation."""

    def __init__(self, session_id: str, expected_partners, arch, cfg, mode,
                 rounds, local_batches_per_round, guidance, canonical_schema,
                 canonical_format="canonical", helper_services=(),
                 label_synonyms=(), field_synonyms=(), sample_k=0,
                 exchange_seed=0, validation=None, tol=1e-6, max_rounds=50):
        self.session_id = session_id
        self.expected = list(expected_partners)
        self.arch = arch
        self.cfg = cfg
        self.mode = mode
        self.rounds = rounds
        self.local_batches = local_batches_per_round
        self.guidance = guidance
        self.canonical_schema = canonical_schema
        self.canonical_format = canonical_format
        self.helper_services = tuple(helper_services)
        self.label_synonyms = tuple(label_synonyms)
        self.field_synonyms = tuple(field_synonyms)
        self.sample_k = sample_k
        self.exchange_seed = exchange_seed
        self.validation = validation
        self.tol = tol
        self.max_rounds = max_rounds

        self.phase = FS_WAITING
        self._seq = 0
        self.registered = []
        self.stats = {}
        self.policies = []
        self.ready = set()
        self.offers_pending = set()
        self.sample_queue = []          # (recipient, payload)
        self.round = 0
        self.round_updates = {}
        self.weights = None
        self.prev_round_weights = None
        self.rr_index = 0
        self.rr_merged = None
        self.converged = False
        self.final_model = None
        self.metrics = {}

    def _msg(self, kind, payload, dest):
        self._seq += 1
        return Message(kind, self.session_id, FUSION_ID, self._seq, payload, dest)

    def _fail(self, why, dest):
        return [self._msg(ERROR, {"error": why}, dest)]

    def _order(self):
        return sorted(self.registered)

    def _build_context(self):
        partners = tuple(
            policy_mod.PartnerDescriptor(
                pid,
                self.stats[pid]["declared_format"],
                tuple(self.stats[pid]["labels"] or ()),
                tuple(self.stats[pid]["fields"]),
                float(self.stats[pid]["trustworthiness"]))
            for pid in self._order())
        canon = policy_mod.CanonicalSchema(
            self.canonical_format,
            tuple(self.canonical_schema.labels or ("value",)),
            tuple(self.canonical_schema.fields))
        return policy_mod.Context(partners, canon, self.helper_services,
                                  None, self.label_synonyms, self.field_synonyms)

    def _issue_control(self):
        self.policies = policy_mod.generate_policies(self.guidance,
                                                     self._build_context())
        order = self._order()
        out = []
        for i, pid in enumerate(order):
            out.append(self._msg(CONTROL_CONFIG, {
                "mode": self.mode,
                "rounds": self.rounds,
                "local_batches_per_round": self.local_batches,
                "sample_k": self.sample_k,
                "exchange_seed": self.exchange_seed,
                "partner_index": i,
                "partner_order": order,
                "canonical_schema": self.canonical_schema.to_dict(),
                "canonical_format": self.canonical_format,
            }, pid))
        self.phase = FS_SESSION_CONFIGURED
        if self.sample_k > 0:
            self.offers_pending = set(order)
        return out

    def _start_fusing(self):
        from . import kernels
        self.phase = FS_FUSING
        self.weights = kernels.init_weights(self.arch.sizes, self.cfg.seed)
        self.round = 0
        if self.mode == MODE_SYNC:
            if self.rounds <= 0:
                return self._finish()
            return self._broadcast_round()
        self.prev_round_weights = self.weights.copy()
        self.rr_index = 0
        self.rr_merged = None
        return self._send_rr()

    def _broadcast_round(self):
        self.round_updates = {}
        return [self._msg(MODEL_UPDATE,
                          {"weights": [float(v) for v in self.weights],
                           "round": self.round}, pid)
                for pid in self._order()]

    def _send_rr(self):
        pid = self._order()[self.rr_index]
        start = self.weights if self.rr_merged is None else self.rr_merged
        return [self._msg(MODEL_UPDATE,
                          {"weights": [float(v) for v in start],
                           "round": self.round}, pid)]

    def _finish(self):
        self.phase = FS_VALIDATING
        self.final_model = Model(self.arch, self.weights)
        self.metrics = {"rounds": self.round, "mode": self.mode,
                        "converged": self.converged}
        if self.validation is not None and len(self.validation):
            metric = "accuracy" if self.arch.classes is not None else "mse"
            self.metrics[metric] = models_mod.evaluate(
                self.final_model, self.validation, metric)
        out = []
        fp = self.final_model.fingerprint()
        for pid in self._order():
            out.append(self._msg(FUSION_RESULT, {
                "weights": [float(v) for v in self.weights],
                "fingerprint": fp}, pid))
            out.append(self._msg(VALIDATION_REPORT, {"metrics": self.metrics}, pid))
        self.phase = FS_COMPLETE
        return out

    def handle(self, msg: Message):
        if msg.kind == ERROR:
            return []
        if msg.kind == REGISTER:
            if msg.sender in self.registered:
                return self._fail(f"duplicate registration of {msg.sender}", msg.sender)
            if msg.session_id != self.session_id:
                return self._fail(f"unknown session {msg.session_id}", msg.sender)
            self.registered.append(msg.sender)
            return []
        if msg.kind == STATS_REPORT:
            if self.phase != FS_WAITING:
                return self._fail(f"StatsReport while {self.phase}", msg.sender)
            self.stats[msg.sender] = msg.payload
            if set(self.stats) >= set(self.expected):
                return self._issue_control()
            return []
        if msg.kind == POLICY_REQUEST:
            if self.phase not in (FS_SESSION_CONFIGURED, FS_POLICIES_ISSUED):
                return self._fail(f"PolicyRequest while {self.phase}", msg.sender)
            text = policy_mod.serialize_policy_set(self.policies)
            out = [self._msg(POLICY_RESPONSE, {"policies": text}, msg.sender)]
            self.phase = FS_POLICIES_ISSUED
            return out
        if msg.kind == DATA_SAMPLE_OFFER:
            for recipient, payload in sorted(msg.payload["samples"].items()):
                self.sample_queue.append((recipient, payload))
            self.offers_pending.discard(msg.sender)
            return self._maybe_start()
        if msg.kind == MODEL_UPDATE:
            if msg.payload.get("ready"):
                self.ready.add(msg.sender)
                return self._maybe_start()
            if self.phase != FS_FUSING:
                return self._fail(f"ModelUpdate while {self.phase}", msg.sender)
            if self.mode == MODE_SYNC:
                return self._sync_update(msg)
            return self._rr_update(msg)
        return self._fail(f"unexpected {msg.kind}", msg.sender)

    def _maybe_start(self):
        if self.phase == FS_FUSING or self.ready != set(self._order()):
            return []
        if self.offers_pending:
            return []
        out = []
        for recipient, payload in self.sample_queue:
            out.append(self._msg(DATA_SAMPLE_OFFER, {"dataset": payload}, recipient))
        self.sample_queue = []
        out.extend(self._start_fusing())
        return out

    def _sync_update(self, msg):
        if int(msg.payload["round"]) != self.round:
            return self._fail("stale round in ModelUpdate", msg.sender)
        self.round_updates[msg.sender] = (
            np.asarray(msg.payload["weights"], dtype=np.float64),
            int(msg.payload["rows"]))
        if set(self.round_updates) != set(self._order()):
            return []
        total = float(sum(c for _, c in self.round_updates.values()))
        w = np.zeros_like(self.weights)
        for pid in self._order():
            wi, c = self.round_updates[pid]
            w += (c / total) * wi
        self.weights = w
        self.round += 1
        if self.round >= self.rounds:
            return self._finish()
        return self._broadcast_round()

    def _rr_update(self, msg):
        wi = np.asarray(msg.payload["weights"], dtype=np.float64)
        j = self.rr_index
        self.rr_merged = wi if self.rr_merged is None else (j * self.rr_merged + wi) / (j + 1)
        self.rr_index += 1
        if self.rr_index < len(self._order()):
            return self._send_rr()
        # round complete
        self.weights = self.rr_merged
        self.round += 1
        delta = float(np.max(np.abs(self.weights - self.prev_round_weights)))
        self.prev_round_weights = self.weights.copy()
        if delta < self.tol:
            self.converged = True
            return self._finish()
        if self.round >= self.max_rounds:
            return self._finish()
        self.rr_index = 0
        self.rr_merged = None
        return self._send_rr()


# --- simulated transport and session harness -------------------------------

@dataclass
class SessionTranscript:
    events: list                    # (virtual time, Message)
    final_model: Model | None
    final_fingerprint: str | None
    metrics: dict
    phases: dict

    def to_jsonl(self) -> str:
        lines = []
        for t, m in self.events:
            lines.append(json.dumps({"t": t, **m.to_dict()}, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


def run_session(fusion_service: FusionService, training_services,
                latency=None, default_latency=1.0) -> SessionTranscript:
    """Drive all state machines to terminal phases over the simulated
    transport.  ``latency`` maps sender id to per-hop delay."""
    latency = dict(latency or {})
    actors = {FUSION_ID: fusion_service}
    for ts in training_services:
        actors[ts.id] = ts

    queue = []
    counter = 0

    def schedule(t, msg):
        nonlocal counter
        heapq.heappush(queue, (t, msg.sender, msg.seq, counter, msg))
        counter += 1

    # kick off every partner with a Configure command at t=0
    for i, ts in enumerate(training_services):
        cmd = Message(CONFIGURE_TRAINING, ts.session_id, "operator", i + 1, {}, ts.id)
        schedule(0.0, cmd)

    events = []
    while queue:
        t, _, _, _, msg = heapq.heappop(queue)
        events.append((t, msg))
        actor = actors.get(msg.dest)
        if actor is None:
            continue
        for out in actor.handle(msg):
            schedule(t + latency.get(out.sender, default_latency), out)

    terminal = {TS_DONE, TS_FAILED}
    phases = {ts.id: ts.phase for ts in training_services}
    phases[FUSION_ID] = fusion_service.phase
    if training_services:
        stalled = (fusion_service.phase not in (FS_COMPLETE, FS_WAITING)
                   or any(ts.phase not in terminal for ts in training_services))
        if stalled and fusion_service.phase != FS_COMPLETE:
            raise DeadlockError(f"session stalled with phases {phases}")

    return SessionTranscript(
        events,
        fusion_service.final_model,
        fusion_service.final_model.fingerprint() if fusion_service.final_model else None,
        fusion_service.metrics,
        phases,
    )
