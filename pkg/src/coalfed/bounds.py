"""Closed-form training-size bounds and the two data-sharing benefit
criteria.

Everything here is pure arithmetic on partner statistics; duplicate
counting is done elsewhere (see curator.dedup) and fed in as a number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError


@dataclass(frozen=True)
class CouponCollectorParams:
    c0: float = 1.0          # precision constant
    c1: float = 1.0          # recall constant
    domain_size: int = 1     # |D|, descriptive only
    range_size: int = 1      # |R|, descriptive only

    def __post_init__(self):
        if self.c0 <= 0 or self.c1 <= 0:
            raise DomainError("c0 and c1 must be positive")
        if self.domain_size < 1 or self.range_size < 1:
            raise DomainError("domain and range sizes must be >= 1")


@dataclass(frozen=True)
class PartnerDataStats:
    partner_id: str
    q: int                   # training-set size
    nu: float                # noise parameter in [0, 1]

    def __post_init__(self):
        if self.q < 0:
            raise DomainError("q must be non-negative")
        if not 0.0 <= self.nu <= 1.0:
            raise DomainError("nu must lie in [0, 1]")


@dataclass(frozen=True)
class UnionStats:
    k: float                 # dedup expansion factor relative to the reference
    nu_agg: float            # aggregate noise of the deduplicated union
    effective_q: int         # union size after duplicate removal

    def __post_init__(self):
        if self.k < 1.0:
            raise DomainError("k must be >= 1")
        if self.nu_agg < 0.0:
            raise DomainError("nu_agg must be non-negative")


def _check_q_nu(q, nu):
    if q < 0:
        raise DomainError("q must be non-negative")
    if not 0.0 <= nu <= 1.0:
        raise DomainError("nu must lie in [0, 1]")


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def precision_bound(params: CouponCollectorParams, q: int, nu: float) -> float:
    """Lower bound on precision for a training set of size q with noise nu,
    clamped to [0, 1]."""
    _check_q_nu(q, nu)
    return _clamp01(1.0 - params.c0 * math.exp(-2.0 * q * (1.0 - nu)))


def recall_bound(params: CouponCollectorParams, q: int, nu: float) -> float:
    """Upper bound on recall, clamped to [0, 1]."""
    _check_q_nu(q, nu)
    return _clamp01(1.0 - params.c1 * math.exp(-q * (1.0 - nu)))


def effective_union(all_partners, dedup_count: int, reference: str) -> UnionStats:
    """Union statistics after duplicate removal, relative to one partner.

    k = dedup_count / Q_ref; nu_agg = sum_j nu_j Q_j / (k Q_ref).
    """
    ref = next((p for p in all_partners if p.partner_id == reference), None)
    if ref is None:
        raise DomainError(f"reference partner {reference!r} not among partners")
    if ref.q == 0:
        raise DomainError(f"reference partner {reference!r} has no data")
    k = dedup_count / ref.q
    nu_agg = sum(p.nu * p.q for p in all_partners) / (k * ref.q)
    return UnionStats(k=k, nu_agg=nu_agg, effective_q=dedup_count)


def sharing_benefit(union: UnionStats, own: PartnerDataStats):
    """Is the deduplicated union better than the partner's own data?
    Strict inequality; ties count as not beneficial."""
    margin = union.k * (1.0 - union.nu_agg) - (1.0 - own.nu)
    return margin > 0.0, margin


def incremental_benefit(new: PartnerDataStats, old: PartnerDataStats):
    """Q_n (1 - nu_n) vs Q_o (1 - nu_o): is the new (shared) training set
    worth switching to?  Strict inequality."""
    margin = new.q * (1.0 - new.nu) - old.q * (1.0 - old.nu)
    return margin > 0.0, margin
