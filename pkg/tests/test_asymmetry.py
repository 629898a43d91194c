import numpy as np
import pytest

from asymlab.asymmetry import (
    CheckReport,
    active_tolerance,
    additivity_check,
    build_sufficient_independence_matrix,
    check_interaction_asymmetry,
    check_no_interaction,
    check_order_at_most_n,
    check_within_slot_order,
    compositionality_check,
    irreducibility_check,
    numerical_rank,
    rank_factorization_property,
    sufficient_independence_check,
    sufficient_nonlinearity_check,
)
from asymlab.generators import preset_generator
from asymlab.multiindex import SlotPartition

PART = SlotPartition(blocks=((0, 1), (2, 3)), latent_dim=4)
RNG = np.random.default_rng(42)
PROBES = RNG.uniform(-0.7, 0.7, size=(6, 4))


def additive_cross(z):
    # within-slot entangled, nothing shared across slots
    return np.array([
        np.exp(0.5 * (z[0] + z[1])), z[0] ** 2 * z[1] + z[0],
        np.sin(z[0] + 0.7 * z[1]),
        np.exp(0.5 * (z[2] + z[3])), z[2] * z[3] ** 2 + z[3],
        np.cos(z[2] - 0.4 * z[3]),
    ])


def bilinear_cross(z):
    out = additive_cross(z)
    out = out + 0.8 * z[0] * z[2]
    return out


def triple_cross(z):
    return additive_cross(z) + 0.6 * z[0] * z[1] * z[2]


def test_report_requires_witness_on_failure():
    with pytest.raises(ValueError):
        CheckReport(name="x", passed=False, margin=-1.0, witnesses=[],
                    probes_used=1, probes_passed=0)


def test_report_json_shape():
    rep = check_no_interaction(additive_cross, PART, PROBES)
    js = rep.to_json()
    assert js["name"] == "no_interaction"
    assert js["passed"] is True
    assert js["probes_used"] == 6
    assert rep.pass_fraction == 1.0


def test_active_tolerance_scales():
    small = active_tolerance(np.ones((2, 2)), None)
    big = active_tolerance(1e4 * np.ones((2, 2)), None)
    assert big > small
    assert active_tolerance(np.ones((2, 2)), 0.5) == 0.5


def test_no_interaction_verdicts():
    assert check_no_interaction(additive_cross, PART, PROBES).passed
    rep = check_no_interaction(bilinear_cross, PART, PROBES)
    assert not rep.passed
    assert rep.witnesses  # failure carries a located witness
    w = rep.witnesses[0]
    assert set(w) == {"point", "index", "value"}


def test_order_bounds():
    # a bilinear cross term is an order-2 interaction: fails the n=1 bound
    assert not check_order_at_most_n(bilinear_cross, PART, 1, PROBES).passed
    assert check_order_at_most_n(bilinear_cross, PART, 2, PROBES).passed
    assert not check_order_at_most_n(triple_cross, PART, 2, PROBES).passed
    with pytest.raises(ValueError):
        check_order_at_most_n(bilinear_cross, PART, 0, PROBES)


def test_within_slot_split_detection():
    # slot coordinates writing to disjoint outputs do not interact at n=0
    def split_slot(z):
        return np.array([np.sin(z[0]), z[1] ** 2,
                         np.exp(0.4 * (z[2] + z[3])), z[2] * z[3]])

    rep = check_within_slot_order(split_slot, PART, 0, PROBES)
    assert not rep.passed
    assert any(w["index"].get("slot") == 1 for w in rep.witnesses)
    assert check_within_slot_order(additive_cross, PART, 0, PROBES).passed


def test_within_slot_higher_order():
    # additive within slots: no second-order within-slot interaction
    def additive_within(z):
        return np.array([np.sin(z[0]) + z[1] ** 2, z[0] ** 3 + np.cos(z[1]),
                         np.sin(z[2]) + z[3] ** 2, z[2] ** 2 + z[3] ** 3])

    assert not check_within_slot_order(additive_within, PART, 1, PROBES).passed
    assert check_within_slot_order(additive_cross, PART, 1, PROBES).passed


def test_asymmetry_bundle_on_presets():
    for n in (0, 1, 2):
        spec = preset_generator(n, rng_seed=n + 30)
        rep = check_interaction_asymmetry(spec, PART, n, PROBES,
                                          equiv_samples=2, rng_seed=1)
        assert rep.passed, rep.witnesses[:2]
        assert "cross" in rep.details and "within" in rep.details
        assert "within_equiv_0" in rep.details


def test_asymmetry_fails_with_subcheck_tag():
    rep = check_interaction_asymmetry(bilinear_cross, PART, 0, PROBES,
                                      equiv_samples=0)
    assert not rep.passed
    assert all("sub_check" in w for w in rep.witnesses)


def test_numerical_rank():
    M = np.diag([1.0, 1e-3, 1e-12])
    assert numerical_rank(M) == 2
    assert numerical_rank(np.zeros((3, 3))) == 0


def test_sufficient_independence_on_presets():
    for n in (0, 1, 2):
        spec = preset_generator(n, rng_seed=50 + n)
        rep = sufficient_independence_check(spec, PART, n, PROBES)
        assert rep.passed
        assert rep.margin == 0.0


def test_independence_matrix_groups():
    spec = preset_generator(2, rng_seed=8)
    m = build_sufficient_independence_matrix(spec, PART, 2, PROBES[0])
    labels = [lab for lab, _ in m.groups]
    assert len(labels) == len(set(labels))
    # n=2 dedup: each unordered second-derivative pair appears exactly once
    total_cols = sum(g.shape[1] for _, g in m.groups)
    assert m.whole.shape[1] == total_cols == m.column_count()
    # 4 first + 10 distinct unordered pairs + 2x4 within-block third order
    assert total_cols == 4 + 10 + 8


def test_sufficient_independence_rejects_zero():
    with pytest.raises(ValueError):
        sufficient_independence_check(lambda z: np.zeros(4), PART, 0, PROBES[:2])


def test_rank_factorization_applicable():
    rng = np.random.default_rng(0)
    A1 = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 3))  # rank 2 of 3 cols
    A2 = np.zeros((6, 2))
    A2[3:, :1] = rng.normal(size=(3, 1))  # rank 1 of 2 cols
    A = np.concatenate([A1 * 0, A2 * 0], axis=1)  # start all-zero then fill
    A[:3, :3] = A1[:3]
    A[:, 3:] = A2
    blocks = [(0, 1, 2), (3, 4)]
    rep = rank_factorization_property(A, blocks, trials=30)
    assert rep.details["applicable"]
    assert rep.passed


def test_rank_factorization_not_applicable():
    rng = np.random.default_rng(1)
    v = rng.normal(size=5)
    A = np.stack([v, 2 * v, rng.normal(size=5)], axis=1)  # shared direction
    rep = rank_factorization_property(A, [(0,), (1, 2)], trials=10)
    assert rep.details["applicable"] is False
    assert rep.passed  # not-applicable is reported, not failed


def test_compositionality():
    assert compositionality_check(additive_cross, PART, PROBES).passed
    rep = compositionality_check(bilinear_cross, PART, PROBES)
    assert not rep.passed
    assert rep.witnesses[0]["index"]["slots"] == [1, 2]


def test_irreducibility_on_preset():
    spec = preset_generator(0, rng_seed=2)
    assert irreducibility_check(spec, PART, PROBES).passed

    def reducible(z):  # slot 0 splits into independent halves
        return np.array([np.sin(z[0]), z[1] ** 2, z[1] ** 3,
                         np.exp(0.4 * (z[2] + z[3])), z[2] * z[3], z[2] ** 2])

    assert not irreducibility_check(reducible, PART, PROBES).passed


def test_additivity_delegates():
    rep = additivity_check(bilinear_cross, PART, PROBES)
    assert rep.name == "additivity"
    assert rep.details["delegates_to"] == "order_at_most_1"
    assert not rep.passed  # the bilinear couples the slots in the Hessian
    assert additivity_check(additive_cross, PART, PROBES).passed


def test_sufficient_nonlinearity_small_model():
    def rich(z):
        out = [np.exp(0.3 * z[0] + 0.2 * z[1]), z[0] ** 2 + z[0] * z[1],
               z[1] ** 3 + z[0] ** 3, np.sin(z[0] - z[1]), z[0] * z[1] ** 2,
               np.exp(0.2 * z[2] - 0.3 * z[3]), z[2] ** 2 + z[2] * z[3],
               z[3] ** 3 - z[2] ** 3, np.cos(z[2] + 0.5 * z[3]), z[2] ** 2 * z[3]]
        return np.array(out)

    assert sufficient_nonlinearity_check(rich, PART, PROBES[:3]).passed

    def linear(z):
        return np.concatenate([z, z[::-1]])

    assert not sufficient_nonlinearity_check(linear, PART, PROBES[:3]).passed
