"""Multi-index algebra over latent coordinates.

A multi-index alpha is an ordered tuple of non-negative integers of length
d_z.  It encodes both the monomial z^alpha = prod_i z_i^alpha_i and the
mixed partial derivative D^alpha.  The key identity used throughout:

    D^alpha z^beta = beta! / (beta - alpha)! * z^(beta - alpha)   if beta >= alpha
                   = 0                                            otherwise

Interaction index sets I_n collect the multi-indices of order n whose
nonzero entries touch at least two different slots; they enumerate the
admissible cross-slot polynomial terms of a generator with bounded
interaction order.

Indices are 0-based internally and 1-based in serialized/user-facing form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MultiIndex = tuple[int, ...]


def validate_multiindex(alpha: Sequence[int], d: int | None = None) -> MultiIndex:
    """Coerce to a well-formed multi-index tuple, checking entries and length."""
    a = tuple(int(x) for x in alpha)
    if any(x < 0 for x in a):
        raise ValueError(f"multi-index entries must be >= 0, got {a}")
    if d is not None and len(a) != d:
        raise ValueError(f"multi-index length {len(a)} != declared dimension {d}")
    return a


def mi_norm(alpha: Sequence[int]) -> int:
    """|alpha| = sum of entries (the derivative/monomial order)."""
    a = validate_multiindex(alpha)
    return sum(a)


def mi_factorial(alpha: Sequence[int]) -> int:
    """alpha! = prod of entry factorials."""
    a = validate_multiindex(alpha)
    return math.prod(math.factorial(x) for x in a)


def mi_power(z: Sequence[float], alpha: Sequence[int]) -> float:
    """z^alpha = prod_i z_i^alpha_i; the empty product (alpha = 0) is 1."""
    a = validate_multiindex(alpha, d=len(z))
    out = 1.0
    for zi, ai in zip(z, a):
        if ai:
            out *= float(zi) ** ai
    return out


def mi_add(alpha: Sequence[int], beta: Sequence[int]) -> MultiIndex:
    a = validate_multiindex(alpha)
    b = validate_multiindex(beta, d=len(a))
    return tuple(x + y for x, y in zip(a, b))


def mi_geq(alpha: Sequence[int], beta: Sequence[int]) -> bool:
    """Elementwise alpha >= beta."""
    a = validate_multiindex(alpha)
    b = validate_multiindex(beta, d=len(a))
    return all(x >= y for x, y in zip(a, b))


def mi_poly_derivative(alpha: Sequence[int], beta: Sequence[int]) -> tuple[float, MultiIndex]:
    """D^alpha applied to the monomial z^beta.

    Returns (coefficient, residual) with D^alpha z^beta = coefficient * z^residual.
    When beta >= alpha fails elementwise the derivative is identically zero and
    (0.0, zero-index) is returned.
    """
    a = validate_multiindex(alpha)
    b = validate_multiindex(beta, d=len(a))
    if not mi_geq(b, a):
        return 0.0, tuple(0 for _ in a)
    residual = tuple(x - y for x, y in zip(b, a))
    coef = 1.0
    for bi, ri in zip(b, residual):
        coef *= math.factorial(bi) / math.factorial(ri)
    return coef, residual


def mi_support(alpha: Sequence[int]) -> tuple[int, ...]:
    """Positions with nonzero entry."""
    a = validate_multiindex(alpha)
    return tuple(i for i, x in enumerate(a) if x > 0)


def all_multiindices(d: int, order: int) -> list[MultiIndex]:
    """All multi-indices of length d with |alpha| = order, lexicographic order.

    Enumeration places `order` unit masses on d positions (multisets), so the
    count is C(d + order - 1, order); exact and cheap at d <= 12, order <= 3.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if order < 0:
        raise ValueError("order must be >= 0")
    out = []
    for positions in itertools.combinations_with_replacement(range(d), order):
        a = [0] * d
        for p in positions:
            a[p] += 1
        out.append(tuple(a))
    out.sort()
    return out


@dataclass(frozen=True)
class SlotPartition:
    """Disjoint slots B_1..B_K covering the latent coordinates {0..d_z-1}."""

    blocks: tuple[tuple[int, ...], ...]
    latent_dim: int

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        seen: set[int] = set()
        for b in blocks:
            if not b:
                raise ValueError("empty slot block")
            if seen & set(b):
                raise ValueError(f"overlapping slot blocks: {blocks}")
            seen |= set(b)
        if seen != set(range(self.latent_dim)):
            raise ValueError(
                f"blocks {blocks} do not partition 0..{self.latent_dim - 1}"
            )

    @property
    def K(self) -> int:
        return len(self.blocks)

    def block_of(self, i: int) -> int:
        for k, b in enumerate(self.blocks):
            if i in b:
                return k
        raise ValueError(f"coordinate {i} outside partition")

    def blocks_touched(self, alpha: Sequence[int]) -> tuple[int, ...]:
        """Sorted slot indices whose coordinates carry nonzero alpha mass."""
        touched = {self.block_of(i) for i in mi_support(validate_multiindex(alpha, self.latent_dim))}
        return tuple(sorted(touched))

    def to_json(self) -> dict:
        # serialized form is 1-based, matching the written [d_z] convention
        return {
            "latent_dim": self.latent_dim,
            "blocks": [[i + 1 for i in b] for b in self.blocks],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SlotPartition":
        blocks = tuple(tuple(i - 1 for i in b) for b in obj["blocks"])
        return cls(blocks=blocks, latent_dim=int(obj["latent_dim"]))


def singleton_partition(d: int) -> SlotPartition:
    return SlotPartition(blocks=tuple((i,) for i in range(d)), latent_dim=d)


def interaction_indices(partition: SlotPartition, n: int, upto: bool = False) -> list[MultiIndex]:
    """I_n (or I_{<=n} when `upto`): order-n multi-indices touching >= 2 slots.

    Defined only for n >= 2; an order-0 or order-1 index cannot straddle two
    blocks.  Returned sorted for deterministic iteration.
    """
    if n < 2:
        raise ValueError(f"interaction indices need n >= 2, got {n}")
    orders = range(2, n + 1) if upto else [n]
    out = []
    for m in orders:
        for a in all_multiindices(partition.latent_dim, m):
            if len(partition.blocks_touched(a)) >= 2:
                out.append(a)
    out.sort()
    return out


def multiindices_within_block(partition: SlotPartition, k: int, order: int) -> list[MultiIndex]:
    """Order-`order` multi-indices supported entirely on slot k."""
    block = partition.blocks[k]
    d = partition.latent_dim
    out = []
    for positions in itertools.combinations_with_replacement(block, order):
        a = [0] * d
        for p in positions:
            a[p] += 1
        out.append(tuple(a))
    out.sort()
    return out


def split_interaction_indices(
    partition: SlotPartition,
    k: int,
    part_a: Iterable[int],
    part_b: Iterable[int],
    order: int,
) -> list[MultiIndex]:
    """Order-`order` indices within slot k with mass on both halves of a split.

    part_a / part_b must partition the slot's coordinates; the special case
    part_a == part_b == {i} admits the pure power alpha = order * e_i (a
    coordinate's interaction with itself).
    """
    A, B = set(part_a), set(part_b)
    block = set(partition.blocks[k])
    if A == B and len(A) == 1:
        i = next(iter(A))
        a = [0] * partition.latent_dim
        a[i] = order
        return [tuple(a)]
    if A | B != block or (A & B):
        raise ValueError("split must partition the slot block")
    out = []
    for a in multiindices_within_block(partition, k, order):
        sup = set(mi_support(a))
        if sup & A and sup & B:
            out.append(a)
    return out


def slot_vector(z: np.ndarray, partition: SlotPartition, k: int) -> np.ndarray:
    """z restricted to slot k's coordinates (in sorted coordinate order)."""
    return np.asarray(z)[list(partition.blocks[k])]
