import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymlab.multiindex import (
    SlotPartition,
    all_multiindices,
    interaction_indices,
    mi_add,
    mi_factorial,
    mi_geq,
    mi_norm,
    mi_poly_derivative,
    mi_power,
    mi_support,
    multiindices_within_block,
    singleton_partition,
    slot_vector,
    split_interaction_indices,
    validate_multiindex,
)

mi_strategy = st.lists(st.integers(0, 4), min_size=1, max_size=5).map(tuple)


@given(mi_strategy, mi_strategy)
def test_add_norm_additive(a, b):
    if len(a) != len(b):
        b = b[: len(a)] + (0,) * max(0, len(a) - len(b))
    assert mi_norm(mi_add(a, b)) == mi_norm(a) + mi_norm(b)


@given(mi_strategy, st.lists(st.floats(-2, 2), min_size=5, max_size=5))
def test_power_multiplicative(a, zs):
    z = np.asarray(zs[: len(a)])
    assert mi_power(z, a) * mi_power(z, a) == pytest.approx(
        mi_power(z, mi_add(a, a)), rel=1e-12, abs=1e-12)


def test_factorial():
    assert mi_factorial((0, 0)) == 1
    assert mi_factorial((3, 2, 1)) == 6 * 2 * 1
    assert mi_factorial((4,)) == 24


def test_validate_rejects():
    with pytest.raises(ValueError):
        validate_multiindex((-1, 0))
    with pytest.raises(ValueError):
        validate_multiindex((1, 2), d=3)


@given(mi_strategy, mi_strategy, st.data())
def test_poly_derivative_composes(a, b, data):
    # D^a then D^g of z^b equals D^(a+g) z^b, coefficients included
    d = len(a)
    b = b[:d] + (0,) * max(0, d - len(b))
    g = data.draw(st.lists(st.integers(0, 2), min_size=d, max_size=d).map(tuple))
    c1, r1 = mi_poly_derivative(a, b)
    if c1 == 0:
        c_joint, _ = mi_poly_derivative(mi_add(a, g), b)
        assert c_joint == 0
        return
    c2, r2 = mi_poly_derivative(g, r1)
    c_joint, r_joint = mi_poly_derivative(mi_add(a, g), b)
    assert c1 * c2 == pytest.approx(c_joint)
    if c_joint != 0:
        assert r2 == r_joint


def test_poly_derivative_exact_values():
    # D^(1,2) z0^2 z1^3 = 2 * 6 * z0 z1
    c, rest = mi_poly_derivative((1, 2), (2, 3))
    assert c == 12.0 and rest == (1, 1)
    c, rest = mi_poly_derivative((3, 0), (2, 3))
    assert c == 0.0


@given(st.integers(1, 4), st.integers(0, 4))
def test_all_multiindices_count(d, k):
    out = all_multiindices(d, k)
    assert len(out) == math.comb(d + k - 1, k)
    assert len(set(out)) == len(out)
    assert all(mi_norm(a) == k for a in out)
    assert out == sorted(out)


def test_partition_validation():
    with pytest.raises(ValueError):
        SlotPartition(blocks=((0, 1), (1, 2)), latent_dim=3)
    with pytest.raises(ValueError):
        SlotPartition(blocks=((0,), (2,)), latent_dim=3)
    with pytest.raises(ValueError):
        SlotPartition(blocks=((0,), ()), latent_dim=1)
    p = SlotPartition(blocks=((2, 0), (1,)), latent_dim=3)
    assert p.blocks == ((0, 2), (1,))  # canonicalized order within a block


def test_partition_roundtrip():
    p = SlotPartition(blocks=((0, 1), (2, 3, 4)), latent_dim=5)
    q = SlotPartition.from_json(p.to_json())
    assert q == p
    assert p.to_json()["blocks"][0] == [1, 2]  # serialized 1-based


def test_blocks_touched():
    p = SlotPartition(blocks=((0, 1), (2, 3)), latent_dim=4)
    assert p.blocks_touched((1, 0, 0, 0)) == (0,)
    assert p.blocks_touched((0, 1, 1, 0)) == (0, 1)
    assert p.blocks_touched((0, 0, 0, 0)) == ()


def test_interaction_indices_touch_two_blocks():
    p = SlotPartition(blocks=((0, 1), (2, 3)), latent_dim=4)
    idx = interaction_indices(p, 2)
    assert idx == [(0, 1, 0, 1), (0, 1, 1, 0), (1, 0, 0, 1), (1, 0, 1, 0)]
    for a in interaction_indices(p, 3):
        assert len(p.blocks_touched(a)) >= 2
        assert mi_norm(a) == 3
    with pytest.raises(ValueError):
        interaction_indices(p, 1)


def test_interaction_indices_upto():
    p = SlotPartition(blocks=((0, 1), (2, 3)), latent_dim=4)
    both = interaction_indices(p, 3, upto=True)
    assert set(interaction_indices(p, 2)) <= set(both)
    assert set(interaction_indices(p, 3)) <= set(both)
    assert len(both) == len(interaction_indices(p, 2)) + len(interaction_indices(p, 3))


def test_within_block_complements_cross():
    # order-k indices split exactly into single-block and cross-block sets
    p = SlotPartition(blocks=((0, 1), (2,)), latent_dim=3)
    for k in (2, 3):
        within = {a for blk in range(p.K) for a in multiindices_within_block(p, blk, k)}
        cross = set(interaction_indices(p, k))
        assert within | cross == set(all_multiindices(3, k))
        assert within & cross == set()


def test_split_interaction_indices():
    p = SlotPartition(blocks=((0, 1, 2), (3,)), latent_dim=4)
    out = split_interaction_indices(p, 0, (0,), (1, 2), 2)
    assert all(a[0] >= 1 and (a[1] + a[2]) >= 1 and a[3] == 0 for a in out)
    assert (1, 1, 0, 0) in out and (1, 0, 1, 0) in out
    # 1-d self split admits only the pure power
    solo = SlotPartition(blocks=((0, 1), (2,)), latent_dim=3)
    assert split_interaction_indices(solo, 1, (2,), (2,), 3) == [(0, 0, 3)]
    with pytest.raises(ValueError):
        split_interaction_indices(p, 0, (0,), (1,), 2)  # not a partition of the block


def test_slot_vector():
    p = SlotPartition(blocks=((0, 2), (1,)), latent_dim=3)
    z = np.array([10.0, 20.0, 30.0])
    assert np.array_equal(slot_vector(z, p, 0), [10.0, 30.0])
    assert np.array_equal(slot_vector(z, p, 1), [20.0])


def test_singleton_partition():
    p = singleton_partition(3)
    assert p.blocks == ((0,), (1,), (2,))


@settings(max_examples=30)
@given(st.integers(2, 5), st.integers(2, 3))
def test_cross_indices_have_two_sided_support(d, k):
    p = SlotPartition(blocks=(tuple(range(d - 1)), (d - 1,)), latent_dim=d)
    for a in interaction_indices(p, k):
        sup = mi_support(a)
        assert any(i < d - 1 for i in sup) and (d - 1) in sup
