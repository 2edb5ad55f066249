import math

import numpy as np
import pytest

from coalfed.bounds import (
    CouponCollectorParams,
    PartnerDataStats,
    UnionStats,
    effective_union,
    incremental_benefit,
    precision_bound,
    recall_bound,
    sharing_benefit,
)
from coalfed.errors import DomainError

P1 = CouponCollectorParams(c0=1.0, c1=1.0)


def test_precision_examples():
    assert precision_bound(P1, 0, 0.0) == 0.0
    assert precision_bound(P1, 1, 0.0) == pytest.approx(1 - math.exp(-2), abs=1e-9)
    assert precision_bound(P1, 10, 1.0) == 0.0


def test_recall_examples():
    assert recall_bound(P1, 0, 0.0) == 0.0
    assert recall_bound(P1, 2, 0.0) == pytest.approx(1 - math.exp(-2), abs=1e-9)
    p = CouponCollectorParams(c0=1.0, c1=0.5)
    assert recall_bound(p, 1, 0.5) == pytest.approx(1 - 0.5 * math.exp(-0.5), abs=1e-9)


def test_bounds_domain_errors():
    with pytest.raises(DomainError):
        precision_bound(P1, -1, 0.0)
    with pytest.raises(DomainError):
        precision_bound(P1, 5, 1.5)
    with pytest.raises(DomainError):
        recall_bound(P1, 5, -0.1)
    with pytest.raises(DomainError):
        CouponCollectorParams(c0=0.0)


def test_bounds_monotone_on_grid():
    qs = np.arange(0, 50)
    nus = np.linspace(0.0, 1.0, 50)
    for nu in nus:
        pvals = [precision_bound(P1, int(q), float(nu)) for q in qs]
        rvals = [recall_bound(P1, int(q), float(nu)) for q in qs]
        assert all(b >= a - 1e-15 for a, b in zip(pvals, pvals[1:]))
        assert all(b >= a - 1e-15 for a, b in zip(rvals, rvals[1:]))
    for q in qs:
        pvals = [precision_bound(P1, int(q), float(nu)) for nu in nus]
        assert all(b <= a + 1e-15 for a, b in zip(pvals, pvals[1:]))


def test_bounds_stay_probabilities():
    rng = np.random.default_rng(1)
    params = CouponCollectorParams(c0=2.5, c1=3.0)
    for _ in range(500):
        q = int(rng.integers(0, 100))
        nu = float(rng.random())
        assert 0.0 <= precision_bound(params, q, nu) <= 1.0
        assert 0.0 <= recall_bound(params, q, nu) <= 1.0


def test_effective_union_symmetric():
    ps = [PartnerDataStats("1", 100, 0.1), PartnerDataStats("2", 100, 0.1)]
    u = effective_union(ps, 200, "1")
    assert u.k == pytest.approx(2.0, abs=1e-12)
    assert u.nu_agg == pytest.approx(0.1, abs=1e-12)
    assert u.effective_q == 200


def test_effective_union_hand_computed():
    ps = [PartnerDataStats("1", 100, 0.0), PartnerDataStats("2", 300, 0.2)]
    u = effective_union(ps, 400, "1")
    assert u.k == pytest.approx(4.0, abs=1e-9)
    assert u.nu_agg == pytest.approx(0.15, abs=1e-9)


def test_effective_union_single_partner_identity():
    ps = [PartnerDataStats("a", 50, 0.3)]
    u = effective_union(ps, 50, "a")
    assert u.k == 1.0
    assert u.nu_agg == 0.3


def test_effective_union_errors():
    with pytest.raises(DomainError):
        effective_union([PartnerDataStats("a", 50, 0.1)], 50, "missing")
    with pytest.raises(DomainError):
        effective_union([PartnerDataStats("a", 0, 0.1)], 10, "a")


def test_sharing_benefit_examples():
    ok, margin = sharing_benefit(UnionStats(2.0, 0.1, 200),
                                 PartnerDataStats("i", 100, 0.1))
    assert ok and margin == pytest.approx(0.9, abs=1e-9)
    ok, margin = sharing_benefit(UnionStats(1.0, 0.2, 100),
                                 PartnerDataStats("i", 100, 0.2))
    assert not ok and margin == pytest.approx(0.0, abs=1e-12)
    ok, margin = sharing_benefit(UnionStats(4.0, 0.15, 400),
                                 PartnerDataStats("i", 100, 0.0))
    assert ok and margin == pytest.approx(2.4, abs=1e-9)


def test_incremental_benefit_examples():
    ok, margin = incremental_benefit(PartnerDataStats("n", 150, 0.2),
                                     PartnerDataStats("o", 100, 0.0))
    assert ok and margin == pytest.approx(20.0, abs=1e-9)
    same = PartnerDataStats("x", 77, 0.3)
    ok, margin = incremental_benefit(same, same)
    assert not ok and margin == 0.0
    ok, margin = incremental_benefit(PartnerDataStats("n", 110, 0.5),
                                     PartnerDataStats("o", 100, 0.0))
    assert not ok and margin == pytest.approx(-45.0, abs=1e-9)


def test_benefit_criteria_sign_agree():
    # both criteria reduce to a Q(1-nu) comparison
    rng = np.random.default_rng(42)
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        partners = [PartnerDataStats(str(i), int(rng.integers(1, 500)),
                                     float(rng.random()))
                    for i in range(n)]
        total = sum(p.q for p in partners)
        ref = partners[int(rng.integers(0, n))]
        dedup = int(rng.integers(ref.q, total + 1))
        union = effective_union(partners, dedup, ref.partner_id)
        ok_share, m_share = sharing_benefit(union, ref)
        ok_inc, m_inc = incremental_benefit(
            PartnerDataStats("union", union.effective_q, min(union.nu_agg, 1.0)),
            ref)
        if abs(m_share) > 1e-9:
            assert ok_share == ok_inc
            assert np.sign(m_share) == np.sign(m_inc)
