"""Model-sharing-mode fusion algorithms: weight averaging, synchronized
fused training, asynchronous round-robin fusion, sample exchange, and the
region-of-applicability ensemble with PCA partitioning and generated
selector policies.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import models as models_mod
from . import policy as policy_mod
from .errors import ArchMismatchError, DomainError, EmptyDataError, OutOfDomainError
from .models import Dataset, Model, TrainConfig, run_steps, train

RAW_FEATURES = "raw_features"
PCA2 = "pca2"

STRATEGY_NAIVE = "naive"
STRATEGY_SYNC = "sync"
STRATEGY_ROUND_ROBIN = "round_robin"
STRATEGY_SAMPLE_EXCHANGE = "sample_exchange"
STRATEGY_ENSEMBLE = "ensemble"


@dataclass(frozen=True)
class TaskCategory:
    """Table of AI-task categories: I=(features, known output),
    II=(raw, known), III=(features, unknown), IV=(raw, unknown)."""

    value: str

    def __post_init__(self):
        if self.value not in ("I", "II", "III", "IV"):
            raise DomainError(f"unknown task category {self.value!r}")

    @property
    def feature_input(self):
        return self.value in ("I", "III")


@dataclass(frozen=True)
class Region:
    """Per-axis [lo, hi] box covering one partner's training data, either
    in raw feature space or projected onto a shared 2-component basis."""

    basis: str                       # raw_features | pca2
    bounds: tuple                    # ((lo, hi), ...) per axis
    owner: str

    def __post_init__(self):
        for lo, hi in self.bounds:
            if lo > hi:
                raise DomainError(f"region bound lo {lo} > hi {hi}")

    def contains(self, point) -> bool:
        return all(lo <= v <= hi for v, (lo, hi) in zip(point, self.bounds))


@dataclass
class RegionCell:
    bounds: tuple                    # ((lo, hi), ...) per axis
    applicable: frozenset            # owning partner ids
    fused_model_id: str | None = None

    def contains(self, point, closed_hi=None) -> bool:
        """Half-open membership: closed on the lower bound, open on the
        upper except on axes listed in closed_hi (the global maximum)."""
        closed_hi = closed_hi or [True] * len(self.bounds)
        for v, (lo, hi), ch in zip(point, self.bounds, closed_hi):
            if v < lo:
                return False
            if v > hi or (v == hi and not ch):
                return False
        return True

    def distance(self, point) -> float:
        d = 0.0
        for v, (lo, hi) in zip(point, self.bounds):
            if v < lo:
                d += (lo - v) ** 2
            elif v > hi:
                d += (v - hi) ** 2
        return d ** 0.5


@dataclass
class EnsembleModel:
    members: dict                    # model_id -> Model
    cells: list                      # RegionCell, fused_model_id set
    selector: list                   # use_model policies, one per cell
    fallback: str = "nearest_cell"   # or refuse
    basis_kind: str = RAW_FEATURES
    basis: np.ndarray | None = None  # (2, d) when pca2
    mean: np.ndarray | None = None

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.basis_kind == PCA2:
            return (x - self.mean) @ self.basis.T
        return x


# --- weight averaging ------------------------------------------------------

def average_weights(mods, weights=None) -> Model:
    """Elementwise (sample-count weighted) mean of same-arch weight
    vectors; uniform by default."""
    if not mods:
        raise EmptyDataError("cannot average an empty model list")
    fp = mods[0].arch.fingerprint()
    for m in mods[1:]:
        if m.arch.fingerprint() != fp:
            raise ArchMismatchError("all models must share one architecture")
    if weights is None:
        weights = [1.0] * len(mods)
    if len(weights) != len(mods) or min(weights) <= 0:
        raise DomainError("weights must be positive, one per model")
    total = float(sum(weights))
    acc = np.zeros_like(models_mod.get_weights(mods[0]).values)
    for m, w in zip(mods, weights):
        acc += (w / total) * models_mod.get_weights(m).values
    return Model(mods[0].arch, acc)


def naive_fusion(mods) -> Model:
    """One-shot unweighted averaging; the baseline that ignores regions."""
    return average_weights(mods)


@dataclass(frozen=True)
class RoundRobinResult:
    model: Model
    rounds_used: int
    converged: bool
    deltas: list


# --- synchronized fused training ------------------------------------------

def _round_seed(base_seed: int, partner_idx: int, round_idx: int) -> int:
    # documented mixing for per-(partner, round) minibatch streams
    return (base_seed * 1000003 + partner_idx * 7919 + round_idx * 104729) & ((1 << 64) - 1)


def sync_fused_training(partners, arch, rounds: int,
                        local_batches_per_round: int) -> Model:
    """All partners start each round from the common weights, run the same
    number of local gradient steps, then the fusion point averages the
    results weighted by sample counts and re-broadcasts.

    ``partners`` is a list of (Dataset, TrainConfig); the first partner's
    seed fixes the shared init.
    """
    if not partners:
        raise EmptyDataError("no partners")
    for ds, _ in partners:
        if len(ds) == 0:
            raise EmptyDataError("partner with empty dataset")
    from . import kernels
    seed = partners[0][1].seed
    w = kernels.init_weights(arch.sizes, seed)
    counts = [len(ds) for ds, _ in partners]
    for r in range(rounds):
        locals_ = []
        for i, (ds, cfg) in enumerate(partners):
            locals_.append(run_steps(arch, w, ds, cfg, local_batches_per_round,
                                     _round_seed(cfg.seed, i, r)))
        total = float(sum(counts))
        w = np.zeros_like(w)
        for wi, c in zip(locals_, counts):
            w += (c / total) * wi
    return Model(arch, w)


# --- asynchronous round-robin fusion --------------------------------------

def round_robin_training(partners, arch, cfg: TrainConfig, tol: float = 1e-6,
                         max_rounds: int = 50):
    """Each partner in fixed order fully trains from the current fused
    weights, merged by a running average within the round.  Stops when the
    max-norm delta between consecutive round-end models drops below tol.

    Returns RoundRobinResult(model, rounds_used, converged, deltas) where
    deltas[r-1] is the round-r weight delta.
    """
    if not partners:
        raise EmptyDataError("no partners")
    for ds in partners:
        if len(ds) == 0:
            raise EmptyDataError("partner with empty dataset")
    from . import kernels
    w = kernels.init_weights(arch.sizes, cfg.seed)
    prev = w.copy()
    converged = False
    rounds_used = 0
    deltas = []
    for r in range(1, max_rounds + 1):
        merged = None
        for j, ds in enumerate(partners):
            start = w if merged is None else merged
            local = train(arch, ds, cfg,
                          init=models_mod.ModelWeights(arch.fingerprint(), start))
            lw = models_mod.get_weights(local).values
            merged = lw if merged is None else (j * merged + lw) / (j + 1)
        w = merged
        rounds_used = r
        delta = float(np.max(np.abs(w - prev)))
        deltas.append(delta)
        prev = w.copy()
        if delta < tol:
            converged = True
            break
    return RoundRobinResult(Model(arch, w), rounds_used, converged, deltas)


# --- sample exchange -------------------------------------------------------

def sample_exchange(partners, k: int, seed: int = 0):
    """Each partner receives k rows sampled without replacement from every
    other partner, appended with the donor's provenance."""
    if k < 0:
        raise DomainError("k must be non-negative")
    out = []
    for i, recipient in enumerate(partners):
        feats = [recipient.features]
        labels = [np.asarray(recipient.labels)]
        prov = list(recipient.provenance)
        for j, donor in enumerate(partners):
            if j == i or k == 0 or len(donor) == 0:
                continue
            rng = np.random.default_rng(np.random.SeedSequence((seed, i, j)))
            take = min(k, len(donor))
            idx = rng.choice(len(donor), size=take, replace=False)
            sub = donor.subset(np.sort(idx))
            feats.append(sub.features)
            labels.append(np.asarray(sub.labels))
            prov.extend(sub.provenance)
        out.append(Dataset(recipient.schema, np.vstack(feats),
                           np.concatenate(labels), prov))
    return out


# --- regions and partitioning ---------------------------------------------

def pca2(features):
    """Top-2 principal directions of the mean-centered data.

    Sign convention: the largest-magnitude entry of each basis vector is
    positive; eigenvalue ties are broken by lexicographic basis order.
    Returns (basis (2, d), eigenvalues (2,), mean (d,)).
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n, d = X.shape
    if n < 2 or d < 2:
        raise DomainError("pca2 needs at least 2 rows and 2 feature dims")
    mean = X.mean(axis=0)
    Xc = X - mean
    if np.allclose(Xc, 0.0):
        raise DomainError("pca2 on rank-0 data (all rows equal)")
    cov = (Xc.T @ Xc) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)      # ascending
    order = np.argsort(-evals, kind="stable")
    vals = evals[order][:2]
    vecs = evecs[:, order][:, :2].T          # (2, d)
    for i in range(2):
        j = int(np.argmax(np.abs(vecs[i])))
        if vecs[i, j] < 0:
            vecs[i] = -vecs[i]
    if abs(vals[0] - vals[1]) <= 1e-12 * max(1.0, abs(vals[0])):
        if tuple(vecs[1]) < tuple(vecs[0]):
            vecs = vecs[::-1].copy()
    return vecs, vals, mean


def applicability_region(data: Dataset, basis: str = RAW_FEATURES,
                         basis_vectors=None, mean=None, owner: str = "",
                         margin: float = 0.0) -> Region:
    """Axis-aligned bounding box of the data in the chosen coordinates."""
    if len(data) == 0:
        raise EmptyDataError("empty dataset has no applicability region")
    X = data.features
    if basis == PCA2:
        if basis_vectors is None:
            raise DomainError("pca2 region needs the shared basis")
        X = (X - mean) @ np.asarray(basis_vectors).T
    lo = X.min(axis=0) - margin
    hi = X.max(axis=0) + margin
    return Region(basis, tuple((float(l), float(h)) for l, h in zip(lo, hi)), owner)


def partition_regions(regions):
    """Arrangement induced by all box boundaries: one cell per grid box
    covered by at least one region, labeled with its covering set."""
    if not regions:
        return []
    axes = len(regions[0].bounds)
    cuts = []
    for a in range(axes):
        vals = sorted({b for r in regions for b in r.bounds[a]})
        cuts.append(vals)
    cells = []

    def rec(axis, bounds_acc):
        if axis == axes:
            mid = [0.5 * (lo + hi) for lo, hi in bounds_acc]
            cover = frozenset(r.owner for r in regions if r.contains(mid))
            if cover:
                cells.append(RegionCell(tuple(bounds_acc), cover))
            return
        vals = cuts[axis]
        intervals = list(zip(vals[:-1], vals[1:])) or [(vals[0], vals[0])]
        for lo, hi in intervals:
            rec(axis + 1, bounds_acc + [(lo, hi)])

    rec(0, [])
    return cells


# --- ensemble --------------------------------------------------------------

def _member_id(owners) -> str:
    owners = sorted(owners)
    return owners[0] if len(owners) == 1 else "fused-" + "-".join(owners)


def build_ensemble(partner_models: dict, partner_data: dict,
                   fusion_inside_cells: str = STRATEGY_ROUND_ROBIN,
                   basis: str = RAW_FEATURES, cfg: TrainConfig | None = None,
                   fallback: str = "nearest_cell", margin: float = 0.0) -> EnsembleModel:
    """Region-of-applicability ensemble: single-owner cells keep that
    partner's model; multi-owner cells get a fused model (weight averaging
    or round-robin retraining on the owners' data restricted to the cell
    class), plus selector policies generated from the cell table."""
    ids = sorted(partner_models)
    if not ids or all(len(partner_data[i]) == 0 for i in ids):
        raise EmptyDataError("no partner data to build regions from")

    basis_vectors = mean = None
    if basis == PCA2:
        pooled = np.vstack([partner_data[i].features for i in ids if len(partner_data[i])])
        basis_vectors, _, mean = pca2(pooled)

    regions = [applicability_region(partner_data[i], basis, basis_vectors, mean,
                                    owner=i, margin=margin)
               for i in ids if len(partner_data[i])]
    cells = partition_regions(regions)

    def project(X):
        return (X - mean) @ basis_vectors.T if basis == PCA2 else X

    members = {}
    classes = {}
    for cell in cells:
        classes.setdefault(cell.applicable, []).append(cell)
    for owners, cls_cells in sorted(classes.items(), key=lambda t: sorted(t[0])):
        mid = _member_id(owners)
        if len(owners) == 1:
            members[mid] = partner_models[next(iter(owners))]
        elif fusion_inside_cells == STRATEGY_NAIVE or cfg is None:
            members[mid] = naive_fusion([partner_models[o] for o in sorted(owners)])
        else:
            restricted = []
            for o in sorted(owners):
                ds = partner_data[o]
                pts = project(ds.features)
                inside = [r for r in range(len(ds))
                          if any(c.contains(pts[r]) for c in cls_cells)]
                if inside:
                    restricted.append(ds.subset(inside))
            if restricted:
                arch = partner_models[next(iter(owners))].arch
                members[mid] = round_robin_training(restricted, arch, cfg).model
            else:
                members[mid] = naive_fusion([partner_models[o] for o in sorted(owners)])
        for c in cls_cells:
            c.fused_model_id = mid

    region_table = tuple((c.bounds, c.fused_model_id) for c in cells)
    selector = policy_mod.generate_policies(
        policy_mod.GuidancePackage(templates=frozenset({"selector"})),
        policy_mod.Context(partners=(), canonical_schema=policy_mod.CanonicalSchema(
            "canonical", ("label",), ("feature",)), region_table=region_table))

    return EnsembleModel(members, cells, selector, fallback, basis,
                         basis_vectors, mean)


def ensemble_predict(e: EnsembleModel, x):
    """Select the member model for the cell containing x (first-declared
    selector policy wins on shared boundaries) and predict with it."""
    p = e.project(np.asarray(x, dtype=np.float64))
    subject = {f"component{a + 1}": float(v) for a, v in enumerate(np.atleast_1d(p))}
    decision = policy_mod.evaluate(e.selector, subject)
    if decision.terminal == policy_mod.USE_MODEL:
        return e.members[decision.model_id].predict(x)
    if e.fallback == "refuse":
        raise OutOfDomainError(f"point {x!r} outside every applicability cell")
    nearest = min(e.cells, key=lambda c: c.distance(np.atleast_1d(p)))
    return e.members[nearest.fused_model_id].predict(x)


def select_fusion_strategy(cat: TaskCategory, can_exchange_samples: bool):
    """Which fusion strategies a task category admits: weight averaging
    always, sample exchange whenever data can move, regions only when the
    inputs are identifiable features (categories I and III)."""
    strategies = {STRATEGY_NAIVE, STRATEGY_SYNC, STRATEGY_ROUND_ROBIN}
    if can_exchange_samples:
        strategies.add(STRATEGY_SAMPLE_EXCHANGE)
    if cat.feature_input:
        strategies.add(STRATEGY_ENSEMBLE)
    return strategies


# --- region/cell table file ------------------------------------------------

def save_region_table(cells, path: str):
    """CSV: per-axis lo/hi bounds, applicable partner ids, model id."""
    if not cells:
        raise EmptyDataError("no cells to write")
    axes = len(cells[0].bounds)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = []
        for a in range(axes):
            header += [f"axis{a}_lo", f"axis{a}_hi"]
        w.writerow(header + ["applicable", "model_id"])
        for c in cells:
            row = []
            for lo, hi in c.bounds:
                row += [repr(float(lo)), repr(float(hi))]
            w.writerow(row + ["+".join(sorted(c.applicable)), c.fused_model_id])
