"""Seeded synthetic scenario generators: region-skewed curve data,
class-skewed classification data, lexicon perturbation, and label-noise
injection.

Every generator draws from numpy Generators seeded with
SeedSequence((spec.seed, site_index)), so adding a site never perturbs the
data of existing sites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .infometrics import GroundTruth
from .models import Dataset, Schema


@dataclass(frozen=True)
class CurveSpec:
    """Regression ground truth: a polynomial (optionally piecewise) curve
    observed by each site only inside its own window."""

    coefficients: tuple = (0.0, 5.0, -4.5, 1.0)      # a0 + a1 x + a2 x^2 + ...
    domain: tuple = (0.0, 3.0)
    site_windows: tuple = ((0.0, 1.0), (1.0, 2.0), (2.0, 3.0))
    samples_per_site: int = 200
    noise_sigma: float = 0.05
    seed: int = 0
    pieces: tuple = ()       # optional ((lo, hi), coeffs) overrides per interval
    field_name: str = "x"

    def __post_init__(self):
        if self.samples_per_site < 1:
            raise DomainError("samples_per_site must be >= 1")
        lo, hi = self.domain
        for w in self.site_windows:
            if w[0] < lo - 1e-12 or w[1] > hi + 1e-12:
                raise DomainError(f"site window {w} outside domain {self.domain}")

    def f(self, x: float) -> float:
        for (lo, hi), coeffs in self.pieces:
            if lo <= x <= hi:
                return float(np.polyval(coeffs[::-1], x))
        return float(np.polyval(self.coefficients[::-1], x))


@dataclass(frozen=True)
class ClassSkewSpec:
    """Gaussian-blob classification data with per-site class priors; a zero
    prior means the class is missing at that site."""

    classes: tuple = ("c0", "c1", "c2")
    site_priors: tuple = ((1.0, 0.0, 0.0), (0.0, 0.5, 0.5))
    class_means: tuple = ()              # K rows of d means; default spread on a line
    class_spread: float = 0.5
    samples_per_site: int = 100
    seed: int = 0
    field_names: tuple = ("f0", "f1")

    def __post_init__(self):
        for row in self.site_priors:
            if len(row) != len(self.classes):
                raise DomainError("prior row length must equal class count")
            if abs(sum(row) - 1.0) > 1e-9 or min(row) < 0:
                raise DomainError(f"priors must be a distribution, got {row}")

    def means(self) -> np.ndarray:
        if self.class_means:
            return np.asarray(self.class_means, dtype=np.float64)
        d = len(self.field_names)
        return np.asarray([[3.0 * k] * d for k in range(len(self.classes))])


def _rng(seed: int, site: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, site)))


def synth_curve(spec: CurveSpec):
    """Per-site datasets plus the ground truth carrying the curve."""
    schema_range = _curve_label_range(spec)
    schema = Schema((spec.field_name,), None, schema_range)
    sites = []
    for i, (lo, hi) in enumerate(spec.site_windows):
        rng = _rng(spec.seed, i)
        x = rng.uniform(lo, hi, spec.samples_per_site)
        y = np.asarray([spec.f(v) for v in x])
        if spec.noise_sigma > 0:
            y = y + rng.normal(0.0, spec.noise_sigma, x.shape[0])
        ds = Dataset(schema, x.reshape(-1, 1), y).with_provenance(f"site{i}")
        sites.append(ds)
    truth = GroundTruth(lambda v: spec.f(float(np.atleast_1d(v)[0])),
                        (spec.domain,), schema_range)
    return sites, truth


def _curve_label_range(spec: CurveSpec):
    grid = np.linspace(spec.domain[0], spec.domain[1], 512)
    vals = np.asarray([spec.f(v) for v in grid])
    pad = 3.0 * spec.noise_sigma
    return (float(vals.min()) - pad, float(vals.max()) + pad)


def synth_classification(spec: ClassSkewSpec):
    """Per-site datasets; class counts are drawn from the site's priors."""
    schema = Schema(spec.field_names, spec.classes, None)
    means = spec.means()
    sites = []
    for i, priors in enumerate(spec.site_priors):
        rng = _rng(spec.seed, i)
        ks = rng.choice(len(spec.classes), size=spec.samples_per_site,
                        p=np.asarray(priors))
        X = means[ks] + rng.normal(0.0, spec.class_spread,
                                   (spec.samples_per_site, len(spec.field_names)))
        labels = np.asarray([spec.classes[k] for k in ks], dtype=object)
        sites.append(Dataset(schema, X, labels).with_provenance(f"site{i}"))
    return sites


def lexicon_perturb(data: Dataset, label_map=None, field_map=None) -> Dataset:
    """Rename labels and/or field names; feature values untouched.  Names
    missing from a map are left intact."""
    label_map = label_map or {}
    field_map = field_map or {}
    fields = tuple(field_map.get(f, f) for f in data.schema.fields)
    if data.schema.is_classification:
        labels = np.asarray([label_map.get(l, l) for l in data.labels], dtype=object)
        label_set = tuple(label_map.get(l, l) for l in data.schema.labels)
        schema = Schema(fields, label_set, None)
    else:
        labels = data.labels
        schema = Schema(fields, None, data.schema.label_range)
    return Dataset(schema, data.features.copy(), labels,
                   list(data.provenance),
                   None if data.noise_marks is None else data.noise_marks.copy())


def inject_noise(data: Dataset, nu: float, seed: int) -> Dataset:
    """Corrupt each row's label independently with probability nu.
    Classification flips to a uniformly chosen wrong class; regression
    replaces the label with a uniform draw over the label range."""
    if not 0.0 <= nu <= 1.0:
        raise DomainError("nu must lie in [0, 1]")
    rng = _rng(seed, 0)
    n = len(data)
    marks = rng.random(n) < nu
    labels = np.array(data.labels, dtype=data.labels.dtype)
    if data.schema.is_classification:
        classes = list(data.schema.labels)
        for i in np.nonzero(marks)[0]:
            wrong = [c for c in classes if c != labels[i]]
            labels[i] = wrong[rng.integers(len(wrong))] if wrong else labels[i]
    else:
        span = data.schema.label_range
        if span is None:
            y = np.asarray(data.labels, dtype=np.float64)
            span = (float(y.min()), float(y.max()))
        for i in np.nonzero(marks)[0]:
            labels[i] = rng.uniform(span[0], span[1])
    return Dataset(data.schema, data.features.copy(), labels,
                   list(data.provenance), marks)
