"""Disentanglement metrics and Jacobian-structure detectors.

ARI compares pixel labelings through the contingency table; J-ARI labels
pixels by the slot whose Jacobian block moves them most; JIS measures how
concentrated each pixel's slot influence is.  Background pixels (from the
ground-truth renderer masks) are excluded from all averages, as are pixels
with an all-zero Jacobian row, and the exclusion counts travel with the
result.  block_permutation_structure and the local disentanglement check
detect slot-respecting Jacobians of latent maps.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .asymmetry import CheckReport
from .attention import CrossAttentionLayer, PixelHead, analytic_slot_jacobian, cross_attention_forward
from .derivatives import StencilConfig
from .multiindex import SlotPartition


@dataclass
class PixelAssignment:
    """Integer label per pixel plus the foreground mask the averages use."""

    labels: np.ndarray
    foreground: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        self.foreground = np.asarray(self.foreground, dtype=bool)
        if self.labels.shape != self.foreground.shape or self.labels.ndim != 1:
            raise ValueError("labels and foreground must be flat and aligned")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("labels must be integers")


def assignment_from_masks(masks: np.ndarray) -> PixelAssignment:
    """Disjoint per-object masks (n_objects, H, W) to a flat assignment;
    uncovered pixels are background."""
    m = np.asarray(masks, dtype=bool)
    if m.ndim != 3:
        raise ValueError("expected (objects, height, width) masks")
    flat = m.reshape(m.shape[0], -1)
    if np.any(np.sum(flat, axis=0) > 1):
        raise ValueError("masks must be disjoint")
    labels = np.full(flat.shape[1], -1, dtype=int)
    for k in range(flat.shape[0]):
        labels[flat[k]] = k
    return PixelAssignment(labels=labels, foreground=labels >= 0)


@dataclass
class MetricResult:
    value: float
    excluded_pixels: int

    def __float__(self) -> float:
        return self.value


def _comb2(x: np.ndarray) -> np.ndarray:
    return x * (x - 1) / 2.0


def ari(a: PixelAssignment, b: PixelAssignment) -> float:
    """Adjusted Rand index between two labelings on their shared foreground;
    1 for identical partitions (up to relabeling), about 0 for independent
    ones."""
    fg = a.foreground & b.foreground
    if not np.any(fg):
        raise ValueError("empty shared foreground")
    la, lb = a.labels[fg], b.labels[fg]
    ua, inv_a = np.unique(la, return_inverse=True)
    ub, inv_b = np.unique(lb, return_inverse=True)
    table = np.zeros((ua.size, ub.size))
    np.add.at(table, (inv_a, inv_b), 1)
    n = la.size
    sum_cells = float(np.sum(_comb2(table)))
    sum_rows = float(np.sum(_comb2(table.sum(axis=1))))
    sum_cols = float(np.sum(_comb2(table.sum(axis=0))))
    expected = sum_rows * sum_cols / _comb2(np.array(n))
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        # both labelings constant (single cluster each): perfect agreement
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def slot_jacobian_norms(
    decoder,
    z_hat: np.ndarray,
    cfg: StencilConfig | None = None,
) -> np.ndarray:
    """Per-pixel L1 norms of each slot's Jacobian block, shape (n_pixels, K);
    the norm runs over the slot's coordinates and all pixel channels.

    decoder is either an (attention layers, pixel head) pair, which uses the
    closed-form Jacobian when it is single-layer single-head and central
    differences otherwise, or a plain callable (K, slot_dim) -> (pixels,
    channels), which always uses central differences.
    """
    z = np.asarray(z_hat, dtype=float)
    if z.ndim != 2:
        raise ValueError("expected (K, slot_dim) slot latents")
    K, s = z.shape

    if isinstance(decoder, tuple) and len(decoder) == 2 and not callable(decoder):
        layers, head = decoder
        if len(layers) == 1 and layers[0].n_heads == 1:
            jac = analytic_slot_jacobian(layers[0], head, z)
            return np.sum(np.abs(jac), axis=(2, 3)).T

        def f(zz):
            return cross_attention_forward(layers, head, zz)[0]
    else:
        f = decoder

    h = (cfg or StencilConfig()).h1
    base = np.asarray(f(z), dtype=float)
    norms = np.zeros((base.shape[0], K))
    for k in range(K):
        for r in range(s):
            zp, zm = z.copy(), z.copy()
            zp[k, r] += h
            zm[k, r] -= h
            col = (np.asarray(f(zp)) - np.asarray(f(zm))) / (2 * h)
            norms[:, k] += np.sum(np.abs(col), axis=-1)
    return norms


def j_ari(
    decoder,
    z_hat: np.ndarray,
    gt: PixelAssignment,
    cfg: StencilConfig | None = None,
    zero_tol: float = 1e-12,
) -> MetricResult:
    """Assign each foreground pixel to the slot with the largest Jacobian
    L1 norm, then ARI against the ground-truth objects.  Pixels whose whole
    Jacobian row is zero are excluded and counted."""
    norms = slot_jacobian_norms(decoder, z_hat, cfg)
    if norms.shape[0] != gt.labels.shape[0]:
        raise ValueError("pixel counts disagree")
    nonzero = np.sum(norms, axis=1) > zero_tol
    fg = gt.foreground & nonzero
    excluded = int(np.sum(gt.foreground & ~nonzero))
    pred = PixelAssignment(labels=np.argmax(norms, axis=1), foreground=fg)
    value = ari(pred, PixelAssignment(labels=gt.labels, foreground=fg))
    return MetricResult(value=value, excluded_pixels=excluded)


def jis(
    decoder,
    z_hat: np.ndarray,
    foreground: np.ndarray | None = None,
    cfg: StencilConfig | None = None,
    zero_tol: float = 1e-12,
) -> MetricResult:
    """Mean over foreground pixels of the largest entry of the L1-normalized
    slot-influence vector; 1 when every pixel belongs to one slot, 1/K when
    influence is uniform."""
    norms = slot_jacobian_norms(decoder, z_hat, cfg)
    if foreground is None:
        foreground = np.ones(norms.shape[0], dtype=bool)
    foreground = np.asarray(foreground, dtype=bool)
    totals = np.sum(norms, axis=1)
    nonzero = totals > zero_tol
    use = foreground & nonzero
    excluded = int(np.sum(foreground & ~nonzero))
    if not np.any(use):
        raise ValueError("no usable foreground pixels")
    shares = norms[use] / totals[use, None]
    return MetricResult(value=float(np.mean(np.max(shares, axis=1))),
                        excluded_pixels=excluded)


def block_permutation_structure(
    J: np.ndarray,
    partition: SlotPartition,
    tol: float = 1e-4,
) -> tuple[int, ...] | None:
    """Slot permutation read off a square Jacobian's block pattern, or None.

    A block (r, c) is active when its largest entry exceeds tol times the
    matrix's largest entry.  Returns pi with pi[c] = the single active row
    block of column block c, provided every row and column block has exactly
    one active partner and the matched blocks have equal sizes; the Jacobian
    of an inverse map yields the inverse permutation.
    """
    J = np.asarray(J, dtype=float)
    d = partition.latent_dim
    if J.shape != (d, d):
        raise ValueError("matrix must be square over the latent dimension")
    scale = float(np.max(np.abs(J)))
    if scale == 0:
        return None
    K = partition.K
    active = np.zeros((K, K), dtype=bool)
    for r in range(K):
        rows = list(partition.blocks[r])
        for c in range(K):
            cols = list(partition.blocks[c])
            active[r, c] = np.max(np.abs(J[np.ix_(rows, cols)])) > tol * scale
    if not (np.all(active.sum(axis=0) == 1) and np.all(active.sum(axis=1) == 1)):
        return None
    pi = tuple(int(np.argmax(active[:, c])) for c in range(K))
    for c in range(K):
        if len(partition.blocks[pi[c]]) != len(partition.blocks[c]):
            return None
    return pi


def local_disentanglement_check(
    f,
    model_pair,
    support_samples,
    tol: float = 1e-4,
    cfg: StencilConfig | None = None,
    agreement: float = 0.99,
) -> CheckReport:
    """Local disentanglement of a model against the ground truth.

    model_pair supplies the latent map h = (model inverse) o f, either
    directly as a callable or as an object with a latent_map attribute and a
    partition.  The map's finite-difference Jacobian must carry a block-
    permutation structure at every sample, with one permutation holding on
    at least the agreement fraction of samples; the winning permutation is
    reported in details["permutation"].
    """
    if callable(model_pair) and not hasattr(model_pair, "latent_map"):
        latent_map = model_pair
        partition = f.partition if hasattr(f, "partition") else None
    else:
        latent_map = model_pair.latent_map
        partition = getattr(model_pair, "partition_latent", None) or model_pair.partition
    if partition is None:
        raise ValueError("no slot partition available for the latent map")
    samples = np.asarray(support_samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[None]
    cfg = cfg or StencilConfig()
    from .derivatives import jacobian as fd_jacobian

    perms = []
    witnesses = []
    for z in samples:
        J = fd_jacobian(latent_map, z, cfg).values
        pi = block_permutation_structure(J, partition, tol)
        perms.append(pi)
        if pi is None:
            witnesses.append({"point": [float(v) for v in z],
                              "index": {"reason": "no block permutation"},
                              "value": 0.0})
    found = [p for p in perms if p is not None]
    if not found:
        return CheckReport(
            name="local_disentanglement", passed=False, margin=-1.0,
            witnesses=witnesses, probes_used=len(samples), probes_passed=0,
            details={"permutation": None},
        )
    winner, _ = Counter(found).most_common(1)[0]
    agree = 0
    for z, pi in zip(samples, perms):
        if pi == winner:
            agree += 1
        elif pi is not None:
            witnesses.append({"point": [float(v) for v in z],
                              "index": {"permutation": [p + 1 for p in pi]},
                              "value": 0.0})
    frac = agree / len(samples)
    passed = all(p is not None for p in perms) and frac >= agreement
    return CheckReport(
        name="local_disentanglement",
        passed=passed,
        margin=float(frac - agreement) if passed else float(frac - 1.0),
        witnesses=witnesses,
        probes_used=len(samples),
        probes_passed=agree,
        details={"permutation": [p + 1 for p in winner], "agreement": frac},
    )
