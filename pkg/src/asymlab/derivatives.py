"""Finite-difference derivative oracle for black-box vector functions.

Central-difference stencils up to order 3:

    order 1:  (f(z + h e_i) - f(z - h e_i)) / (2h)
    order 2, i == j:  (f(z + h e_i) - 2 f(z) + f(z - h e_i)) / h^2
    order 2, i != j:  four corner evaluations / (4 h^2)
    order 3:  outer central difference (in the first index) of the order-2
              stencil, reusing the validated lower-order code.

All stencils have O(h^2) truncation error, so one Richardson level
(4 D(h/2) - D(h)) / 3 removes the leading term.  A function here is any
callable mapping a 1-D point to a 1-D output vector; both analytic
generators and trained decoders qualify.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .multiindex import MultiIndex, validate_multiindex

VectorFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StencilConfig:
    h1: float = 1e-4
    h2: float = 1e-3
    h3: float = 5e-3
    richardson_levels: int = 0
    tol_sym: float = 1e-3

    def __post_init__(self):
        if min(self.h1, self.h2, self.h3) <= 0:
            raise ValueError("stencil steps must be positive")
        if self.richardson_levels < 0:
            raise ValueError("richardson_levels must be >= 0")

    def step(self, order: int) -> float:
        return {1: self.h1, 2: self.h2, 3: self.h3}[order]


def _eval(f: VectorFn, z: np.ndarray) -> np.ndarray:
    x = np.asarray(f(z), dtype=float)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite function value at stencil point {z}")
    return x


def _d1(f: VectorFn, z: np.ndarray, i: int, h: float) -> np.ndarray:
    e = np.zeros_like(z)
    e[i] = h
    return (_eval(f, z + e) - _eval(f, z - e)) / (2 * h)


def _d2(f: VectorFn, z: np.ndarray, i: int, j: int, h: float) -> np.ndarray:
    ei = np.zeros_like(z)
    ei[i] = h
    if i == j:
        return (_eval(f, z + ei) - 2 * _eval(f, z) + _eval(f, z - ei)) / h**2
    ej = np.zeros_like(z)
    ej[j] = h
    return (
        _eval(f, z + ei + ej)
        - _eval(f, z + ei - ej)
        - _eval(f, z - ei + ej)
        + _eval(f, z - ei - ej)
    ) / (4 * h**2)


def _d3(f: VectorFn, z: np.ndarray, i: int, j: int, k: int, h: float) -> np.ndarray:
    e = np.zeros_like(z)
    e[i] = h
    return (_d2(f, z + e, j, k, h) - _d2(f, z - e, j, k, h)) / (2 * h)


def _richardson(est: Callable[[float], np.ndarray], h: float, levels: int) -> np.ndarray:
    if levels == 0:
        return est(h)
    coarse = _richardson(est, h, levels - 1)
    fine = _richardson(est, h / 2, levels - 1)
    return (4 * fine - coarse) / 3


@dataclass
class DerivativeTensor:
    """Dense partial-derivative block D^(order) f(z), symmetric in its
    differentiation axes.

    values has shape (d_x,) + (d_z,) * order.
    """

    order: int
    values: np.ndarray

    def __post_init__(self):
        if self.order not in (1, 2, 3):
            raise ValueError(f"unsupported derivative order {self.order}")
        if self.values.ndim != self.order + 1:
            raise ValueError("values rank does not match declared order")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite derivative entries")

    @property
    def out_dim(self) -> int:
        return self.values.shape[0]

    @property
    def in_dim(self) -> int:
        return self.values.shape[1]


def jacobian(f: VectorFn, z: Sequence[float], cfg: StencilConfig = StencilConfig()) -> DerivativeTensor:
    """Central-difference Jacobian, columns D_i f(z)."""
    z = np.asarray(z, dtype=float)
    cols = [
        _richardson(lambda h, i=i: _d1(f, z, i, h), cfg.h1, cfg.richardson_levels)
        for i in range(len(z))
    ]
    return DerivativeTensor(order=1, values=np.stack(cols, axis=1))


def cross_partial(
    f: VectorFn,
    z: Sequence[float],
    indices: Sequence[int],
    cfg: StencilConfig = StencilConfig(),
) -> np.ndarray:
    """Mixed partial D_{i1 i2 [i3]} f(z) as a length-d_x vector.

    Index order does not matter analytically; numerically the estimates for
    permuted orderings agree within cfg.tol_sym on smooth functions (the
    order-3 construction differences the first index on the outside).
    """
    z = np.asarray(z, dtype=float)
    idx = tuple(int(i) for i in indices)
    if any(i < 0 or i >= len(z) for i in idx):
        raise ValueError(f"derivative index out of range: {idx}")
    if len(idx) == 2:
        return _richardson(lambda h: _d2(f, z, idx[0], idx[1], h), cfg.h2, cfg.richardson_levels)
    if len(idx) == 3:
        return _richardson(lambda h: _d3(f, z, idx[0], idx[1], idx[2], h), cfg.h3, cfg.richardson_levels)
    raise ValueError(f"cross_partial handles 2 or 3 indices, got {len(idx)}")


def multiindex_to_axes(alpha: MultiIndex) -> tuple[int, ...]:
    """Expand a multi-index into the sorted tuple of differentiation axes."""
    axes: list[int] = []
    for i, a in enumerate(alpha):
        axes.extend([i] * a)
    return tuple(axes)


def derivative_by_multiindex(
    f: VectorFn,
    z: Sequence[float],
    alpha: Sequence[int],
    cfg: StencilConfig = StencilConfig(),
) -> np.ndarray:
    """D^alpha f(z) for |alpha| <= 3, delegating to the per-order stencils."""
    z = np.asarray(z, dtype=float)
    a = validate_multiindex(alpha, d=len(z))
    axes = multiindex_to_axes(a)
    order = len(axes)
    if order == 0:
        return _eval(f, z)
    if order == 1:
        return _richardson(lambda h: _d1(f, z, axes[0], h), cfg.h1, cfg.richardson_levels)
    if order in (2, 3):
        return cross_partial(f, z, axes, cfg)
    raise ValueError(f"unsupported derivative order |alpha| = {order}")


def estimate_derivative_tensor(
    f: VectorFn,
    z: Sequence[float],
    order: int,
    cfg: StencilConfig = StencilConfig(),
    check_symmetry: bool = True,
) -> DerivativeTensor:
    """Full dense derivative tensor of the given order.

    Entries are estimated once per unordered index tuple and mirrored to all
    permutations.  When check_symmetry is set, a few entries are re-estimated
    with a permuted stencil ordering and compared against cfg.tol_sym, so the
    symmetry invariant is measured rather than assumed.
    """
    z = np.asarray(z, dtype=float)
    d = len(z)
    if order == 1:
        return jacobian(f, z, cfg)
    if order not in (2, 3):
        raise ValueError(f"unsupported derivative order {order}")

    probe = _eval(f, z)
    values = np.zeros((len(probe),) + (d,) * order)
    canonical: dict[tuple[int, ...], np.ndarray] = {}
    for idx in itertools.combinations_with_replacement(range(d), order):
        est = cross_partial(f, z, idx, cfg)
        canonical[idx] = est
        for perm in set(itertools.permutations(idx)):
            values[(slice(None),) + perm] = est

    if check_symmetry:
        scale = 1.0 + max(float(np.max(np.abs(v))) for v in canonical.values())
        sampled = 0
        for idx, est in canonical.items():
            if len(set(idx)) < 2 or sampled >= 5:
                continue
            alt = cross_partial(f, z, idx[::-1], cfg)
            gap = float(np.max(np.abs(alt - est)))
            if gap > cfg.tol_sym * scale:
                raise FloatingPointError(
                    f"mixed-partial symmetry violated at indices {idx}: gap {gap:.3e}"
                )
            sampled += 1

    return DerivativeTensor(order=order, values=values)
