"""Numerical certification of derivative-structure conditions.

Every check shares the same shape: evaluate finite-difference derivatives of
a black-box function at a declared probe set, compare against a scale-aware
tolerance, and emit a CheckReport carrying the verdict, the worst-case
margin, and witnesses for failures.  "For all z" in the written conditions
always means "at every probe" here; reports record the probe count so the
claim's scope is explicit.

Tolerances: a derivative counts as nonzero when |value| exceeds
tol_active = 1e-5 * (1 + max |Df(z)|), and numerical rank counts singular
values above rank_tol * sigma_max (default rank_tol 1e-7, matching the
finite-difference noise floor).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .derivatives import StencilConfig, cross_partial, derivative_by_multiindex, jacobian
from .generators import apply_equivalence, random_equivalence
from .multiindex import (
    MultiIndex,
    SlotPartition,
    interaction_indices,
    multiindices_within_block,
    split_interaction_indices,
)

VectorFn = Callable[[np.ndarray], np.ndarray]

ACTIVE_TOL_FACTOR = 1e-5
RANK_TOL = 1e-7


@dataclass
class CheckReport:
    """Outcome of one structural check.

    margin is the worst-case slack against the tolerance: >= 0 on pass,
    < 0 on fail (for integer rank mismatches the slack is minus the
    mismatch, so a clean pass sits at 0).  Failures always carry at least
    one witness (point, 1-based index tuple, measured value).
    """

    name: str
    passed: bool
    margin: float
    witnesses: list[dict] = field(default_factory=list)
    probes_used: int = 0
    probes_passed: int = 0
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.passed and not self.witnesses:
            raise ValueError("failing report must carry a witness")

    @property
    def pass_fraction(self) -> float:
        return self.probes_passed / self.probes_used if self.probes_used else 1.0

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "margin": float(self.margin),
            "witnesses": self.witnesses,
            "probes_used": self.probes_used,
            "probes_passed": self.probes_passed,
            "pass_fraction": self.pass_fraction,
            "details": self.details,
        }


def _as_probes(probes) -> np.ndarray:
    p = np.asarray(probes, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    if p.size == 0:
        raise ValueError("probe set must be non-empty")
    return p


def active_tolerance(jac_values: np.ndarray, tol: float | None) -> float:
    if tol is not None:
        return tol
    return ACTIVE_TOL_FACTOR * (1.0 + float(np.max(np.abs(jac_values))))


def _witness(z: np.ndarray, index, value) -> dict:
    return {"point": [float(v) for v in z], "index": index, "value": float(value)}


def _cross_pairs(partition: SlotPartition):
    for k, j in itertools.combinations(range(partition.K), 2):
        for i1 in partition.blocks[k]:
            for i2 in partition.blocks[j]:
                yield i1, i2


def check_no_interaction(
    f: VectorFn,
    partition: SlotPartition,
    probes,
    tol: float | None = None,
    cfg: StencilConfig = StencilConfig(),
) -> CheckReport:
    """No interaction across slots: D_i f (.) D_j f = 0 elementwise for every
    cross-block coordinate pair (Hadamard product of Jacobian columns)."""
    probes = _as_probes(probes)
    witnesses = []
    margin = np.inf
    passed_probes = 0
    for z in probes:
        J = jacobian(f, z, cfg).values
        tol_z = active_tolerance(J, tol)
        worst = 0.0
        worst_idx = None
        for i1, i2 in _cross_pairs(partition):
            prod = np.abs(J[:, i1] * J[:, i2])
            l = int(np.argmax(prod))
            if prod[l] > worst:
                worst = float(prod[l])
                worst_idx = (i1 + 1, i2 + 1, l + 1)
        margin = min(margin, tol_z - worst)
        if worst <= tol_z:
            passed_probes += 1
        else:
            witnesses.append(_witness(z, worst_idx, worst))
    return CheckReport(
        name="no_interaction",
        passed=passed_probes == len(probes),
        margin=float(margin),
        witnesses=witnesses,
        probes_used=len(probes),
        probes_passed=passed_probes,
    )


def check_order_at_most_n(
    f: VectorFn,
    partition: SlotPartition,
    n: int,
    probes,
    tol: float | None = None,
    cfg: StencilConfig = StencilConfig(),
) -> CheckReport:
    """At most n-th order interaction across slots, n in {1, 2}: every
    order-(n+1) multi-index touching two or more blocks has D^alpha f = 0."""
    if n not in (1, 2):
        raise ValueError("cross-order check supports n in {1, 2}")
    probes = _as_probes(probes)
    alphas = interaction_indices(partition, n + 1)
    witnesses = []
    margin = np.inf
    passed_probes = 0
    for z in probes:
        J = jacobian(f, z, cfg).values
        tol_z = active_tolerance(J, tol)
        worst = 0.0
        worst_alpha = None
        for a in alphas:
            val = float(np.max(np.abs(derivative_by_multiindex(f, z, a, cfg))))
            if val > worst:
                worst, worst_alpha = val, a
        margin = min(margin, tol_z - worst)
        if worst <= tol_z:
            passed_probes += 1
        else:
            witnesses.append(_witness(z, list(worst_alpha), worst))
    return CheckReport(
        name=f"order_at_most_{n}",
        passed=passed_probes == len(probes),
        margin=float(margin),
        witnesses=witnesses,
        probes_used=len(probes),
        probes_passed=passed_probes,
        details={"multi_indices_checked": len(alphas)},
    )


def _slot_splits(block: tuple[int, ...]):
    """2-part splits of a block, each once; a 1-d block interacts with itself."""
    if len(block) == 1:
        yield {block[0]}, {block[0]}
        return
    rest = block[1:]
    anchor = block[0]
    for r in range(len(rest) + 1):
        for extra in itertools.combinations(rest, r):
            A = {anchor, *extra}
            B = set(block) - A
            if B:
                yield A, B


def check_within_slot_order(
    f: VectorFn,
    partition: SlotPartition,
    n: int,
    probes,
    tol: float | None = None,
    cfg: StencilConfig = StencilConfig(),
) -> CheckReport:
    """Within-slot richness: every 2-part split of every slot shows an active
    order-(n+1) derivative with mass on both sides.

    Candidate multi-indices are restricted to the slot's own coordinates;
    when the cross-slot bound at order n holds (the companion check), any
    order-(n+1) index straddling the slot boundary vanishes anyway, so the
    restriction loses nothing.
    """
    if n not in (0, 1, 2):
        raise ValueError("within-slot check supports n in {0, 1, 2}")
    if any(len(b) > 6 for b in partition.blocks):
        raise ValueError("slot too large to enumerate splits (max 6)")
    probes = _as_probes(probes)
    witnesses = []
    margin = np.inf
    passed_probes = 0
    for z in probes:
        J = jacobian(f, z, cfg).values
        tol_z = active_tolerance(J, tol)
        probe_ok = True
        for k, block in enumerate(partition.blocks):
            for A, B in _slot_splits(block):
                best = 0.0
                if n == 0:
                    # first-order interaction is the shared-output condition:
                    # some output moved from both sides of the split
                    for iA in A:
                        for iB in B:
                            best = max(best, float(np.max(np.abs(J[:, iA] * J[:, iB]))))
                else:
                    for a in split_interaction_indices(partition, k, A, B, n + 1):
                        val = float(np.max(np.abs(derivative_by_multiindex(f, z, a, cfg))))
                        best = max(best, val)
                        if best > tol_z:
                            break
                margin = min(margin, best - tol_z)
                if best <= tol_z:
                    probe_ok = False
                    witnesses.append(
                        _witness(z, {"slot": k + 1, "split": [sorted(i + 1 for i in A),
                                                             sorted(i + 1 for i in B)]}, best)
                    )
        if probe_ok:
            passed_probes += 1
    return CheckReport(
        name=f"within_slot_order_{n + 1}",
        passed=passed_probes == len(probes),
        margin=float(margin),
        witnesses=witnesses,
        probes_used=len(probes),
        probes_passed=passed_probes,
    )


def check_interaction_asymmetry(
    f: VectorFn,
    partition: SlotPartition,
    n: int,
    probes,
    equiv_samples: int = 10,
    tol: float | None = None,
    rng_seed: int = 0,
    cfg: StencilConfig = StencilConfig(),
) -> CheckReport:
    """Interaction asymmetry at order n: the cross-slot bound holds for f,
    and the within-slot richness holds for f and for a random sample of
    equivalent generators (slot-wise basis changes, probes mapped along)."""
    probes = _as_probes(probes)
    if n == 0:
        cross = check_no_interaction(f, partition, probes, tol, cfg)
    else:
        cross = check_order_at_most_n(f, partition, n, probes, tol, cfg)
    sub = [("cross", cross)]

    within = check_within_slot_order(f, partition, n, probes, tol, cfg)
    sub.append(("within", within))

    rng = np.random.default_rng(rng_seed)
    for s in range(equiv_samples):
        T = random_equivalence(partition, rng)
        fbar = apply_equivalence(f, T, partition)
        mapped = np.stack([fbar.push_point(z) for z in probes])
        rep = check_within_slot_order(fbar, partition, n, mapped, tol, cfg)
        sub.append((f"within_equiv_{s}", rep))

    witnesses = []
    for label, rep in sub:
        for w in rep.witnesses:
            witnesses.append({**w, "sub_check": label})
    passed = all(rep.passed for _, rep in sub)
    return CheckReport(
        name=f"interaction_asymmetry_n{n}",
        passed=passed,
        margin=float(min(rep.margin for _, rep in sub)),
        witnesses=witnesses,
        probes_used=len(probes),
        probes_passed=min(rep.probes_passed for _, rep in sub),
        details={label: {"passed": rep.passed, "margin": rep.margin} for label, rep in sub},
    )


# ---------------------------------------------------------------------------
# rank conditions


def numerical_rank(M: np.ndarray, rank_tol: float = RANK_TOL) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


@dataclass
class SufficientIndependenceMatrix:
    """Stacked derivative columns grouped as the order-n rank condition
    prescribes.  Symmetric duplicates are collapsed: each unordered
    second-derivative pair contributes one column, and a cross-block pair
    is assigned to the lower-indexed block's group (the two groups would
    otherwise share a literal column, making rank additivity unsatisfiable
    for any generator with genuine bilinear cross terms)."""

    order: int
    groups: list[tuple[str, np.ndarray]]

    @property
    def whole(self) -> np.ndarray:
        return np.concatenate([g for _, g in self.groups], axis=1)

    def column_count(self) -> int:
        return sum(g.shape[1] for _, g in self.groups)


def build_sufficient_independence_matrix(
    f: VectorFn,
    partition: SlotPartition,
    n: int,
    z: np.ndarray,
    cfg: StencilConfig = StencilConfig(),
) -> SufficientIndependenceMatrix:
    if n not in (0, 1, 2):
        raise ValueError("sufficient independence defined for n in {0, 1, 2}")
    J = jacobian(f, z, cfg).values
    first = {k: J[:, list(b)] for k, b in enumerate(partition.blocks)}
    if n == 0:
        return SufficientIndependenceMatrix(
            order=0, groups=[(f"block{k + 1}_order1", first[k]) for k in range(partition.K)]
        )

    def d2(i: int, j: int) -> np.ndarray:
        return cross_partial(f, z, (i, j), cfg)

    if n == 1:
        groups = []
        for k, b in enumerate(partition.blocks):
            groups.append((f"block{k + 1}_order1", first[k]))
            cols = [d2(i, j) for i, j in itertools.combinations_with_replacement(b, 2)]
            groups.append((f"block{k + 1}_order2", np.stack(cols, axis=1)))
        return SufficientIndependenceMatrix(order=1, groups=groups)

    # n = 2: per block, [order-1 | order-2 with second index over all of
    # [d_z]] plus a separate within-block order-3 group
    d2_cache: dict[tuple[int, int], np.ndarray] = {}

    def d2c(i: int, j: int) -> np.ndarray:
        key = (min(i, j), max(i, j))
        if key not in d2_cache:
            d2_cache[key] = d2(*key)
        return d2_cache[key]

    rest_groups = []
    claimed: set[tuple[int, int]] = set()
    for k, b in enumerate(partition.blocks):
        cols = [first[k][:, c] for c in range(len(b))]
        for i in b:
            for j in range(partition.latent_dim):
                key = (min(i, j), max(i, j))
                if key in claimed:
                    continue
                claimed.add(key)
                cols.append(d2c(i, j))
        rest_groups.append((f"block{k + 1}_order12", np.stack(cols, axis=1)))
    high_groups = []
    for k, b in enumerate(partition.blocks):
        cols = []
        for a in multiindices_within_block(partition, k, 3):
            cols.append(derivative_by_multiindex(f, z, a, cfg))
        high_groups.append((f"block{k + 1}_order3", np.stack(cols, axis=1)))
    return SufficientIndependenceMatrix(order=2, groups=rest_groups + high_groups)


def sufficient_independence_check(
    f: VectorFn,
    partition: SlotPartition,
    n: int,
    probes,
    rank_tol: float = RANK_TOL,
    cfg: StencilConfig = StencilConfig(),
) -> CheckReport:
    """Rank additivity of the stacked derivative groups at every probe:
    rank(whole) must equal the sum of per-group ranks."""
    probes = _as_probes(probes)
    witnesses = []
    worst_gap = 0
    passed_probes = 0
    warned = False
    for z in probes:
        m = build_sufficient_independence_matrix(f, partition, n, z, cfg)
        whole = m.whole
        if not np.any(whole):
            raise ValueError("degenerate all-zero derivative matrix")
        if whole.shape[0] < m.column_count() and not warned:
            warned = True
        r_whole = numerical_rank(whole, rank_tol)
        r_sum = sum(numerical_rank(g, rank_tol) for _, g in m.groups)
        gap = abs(r_whole - r_sum)
        worst_gap = max(worst_gap, gap)
        if gap == 0:
            passed_probes += 1
        else:
            witnesses.append(_witness(z, {"rank_whole": r_whole, "rank_sum": r_sum}, gap))
    details = {"order": n}
    if warned:
        details["satisfiability_warning"] = (
            "output dimension below the stacked column count; condition may be unsatisfiable"
        )
    return CheckReport(
        name=f"sufficient_independence_n{n}",
        passed=passed_probes == len(probes),
        margin=float(-worst_gap),
        witnesses=witnesses,
        probes_used=len(probes),
        probes_passed=passed_probes,
        details=details,
    )


def rank_factorization_property(
    A: np.ndarray,
    column_blocks: Sequence[Sequence[int]],
    trials: int = 100,
    rng_seed: int = 0,
    rank_tol: float = RANK_TOL,
) -> CheckReport:
    """Empirical rank-factorization lemma: when rank(A) equals the sum of the
    per-block column ranks, every null vector z of A satisfies A_S z_S = 0
    blockwise.  When the rank equation fails the lemma does not apply and
    the report says so instead of judging."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix must be finite")
    blocks = [list(b) for b in column_blocks]
    flat = sorted(i for b in blocks for i in b)
    if flat != list(range(A.shape[1])):
        raise ValueError("column blocks must partition the columns")
    r_whole = numerical_rank(A, rank_tol)
    r_sum = sum(numerical_rank(A[:, b], rank_tol) for b in blocks)
    if r_whole != r_sum:
        return CheckReport(
            name="rank_factorization",
            passed=True,
            margin=0.0,
            probes_used=0,
            probes_passed=0,
            details={"applicable": False, "rank_whole": r_whole, "rank_sum": r_sum},
        )

    # null-space basis from the SVD's trailing right singular vectors
    _, s, vt = np.linalg.svd(A)
    null_dim = A.shape[1] - r_whole
    if null_dim == 0:
        return CheckReport(
            name="rank_factorization",
            passed=True,
            margin=0.0,
            probes_used=0,
            probes_passed=0,
            details={"applicable": True, "null_dim": 0},
        )
    basis = vt[-null_dim:].T
    rng = np.random.default_rng(rng_seed)
    scale = 1e-8 * max(1.0, float(np.max(np.abs(A))))
    witnesses = []
    worst = 0.0
    ok = 0
    for _ in range(trials):
        v = basis @ rng.normal(size=null_dim)
        nv = float(np.max(np.abs(v)))
        if nv == 0:
            ok += 1
            continue
        v = v / nv
        res = max(float(np.max(np.abs(A[:, b] @ v[b]))) for b in blocks)
        worst = max(worst, res)
        if res <= scale:
            ok += 1
        else:
            witnesses.append({"point": None, "index": {"residual": res}, "value": res})
    return CheckReport(
        name="rank_factorization",
        passed=ok == trials,
        margin=float(scale - worst),
        witnesses=witnesses,
        probes_used=trials,
        probes_passed=ok,
        details={"applicable": True, "null_dim": null_dim},
    )


# ---------------------------------------------------------------------------
# prior-work conditions (unification checks)


def _active_outputs(J: np.ndarray, partition: SlotPartition, k: int, tol_z: float) -> set[int]:
    block = list(partition.blocks[k])
    mask = np.max(np.abs(J[:, block]), axis=1) > tol_z
    return set(np.nonzero(mask)[0].tolist())


def compositionality_check(
    f: VectorFn,
    partition: SlotPartition,
    probes,
    tol: float | None = None,
    cfg: StencilConfig = StencilConfig(),
) -> CheckReport:
    """Output-index sets I_k(z) (outputs with an active slot derivative) must
    be pairwise disjoint at every probe."""
    probes = _as_probes(probes)
    witnesses = []
    passed_probes = 0
    for z in probes:
        J = jacobian(f, z, cfg).values
        tol_z = active_tolerance(J, tol)
        sets = [_active_outputs(J, partition, k, tol_z) for k in range(partition.K)]
        clash = None
        for k, j in itertools.combinations(range(partition.K), 2):
            shared = sets[k] & sets[j]
            if shared:
                clash = (k, j, min(shared))
                break
        if clash is None:
            passed_probes += 1
        else:
            k, j, l = clash
            witnesses.append(_witness(z, {"slots": [k + 1, j + 1], "output": l + 1}, 0.0))
    return CheckReport(
        name="compositionality",
        passed=passed_probes == len(probes),
        margin=0.0 if passed_probes == len(probes) else -1.0,
        witnesses=witnesses,
        probes_used=len(probes),
        probes_passed=passed_probes,
    )


def irreducibility_check(
    f: VectorFn,
    partition: SlotPartition,
    probes,
    rank_tol: float = RANK_TOL,
    tol: float | None = None,
    cfg: StencilConfig = StencilConfig(),
    max_enumerate: int = 12,
    sampled_splits: int = 200,
    rng_seed: int = 0,
) -> CheckReport:
    """Every 2-part split S1 | S2 of each I_k(z) must satisfy
    rank(Df_S1) + rank(Df_S2) > rank(Df_{I_k}) (rows restricted, all
    columns).  Slots whose I_k has fewer than 2 outputs admit no split and
    pass vacuously."""
    probes = _as_probes(probes)
    rng = np.random.default_rng(rng_seed)
    witnesses = []
    margin = np.inf
    passed_probes = 0
    for z in probes:
        J = jacobian(f, z, cfg).values
        tol_z = active_tolerance(J, tol)
        probe_ok = True
        for k in range(partition.K):
            I_k = sorted(_active_outputs(J, partition, k, tol_z))
            if len(I_k) < 2:
                continue
            r_total = numerical_rank(J[I_k, :], rank_tol)
            if len(I_k) <= max_enumerate:
                splits = []
                anchor, rest = I_k[0], I_k[1:]
                for r in range(len(rest)):
                    for extra in itertools.combinations(rest, r):
                        S1 = [anchor, *extra]
                        S2 = [i for i in I_k if i not in S1]
                        if S2:
                            splits.append((S1, S2))
            else:
                splits = []
                for _ in range(sampled_splits):
                    mask = rng.integers(0, 2, size=len(I_k)).astype(bool)
                    if mask.all() or not mask.any():
                        continue
                    S1 = [i for i, m in zip(I_k, mask) if m]
                    S2 = [i for i, m in zip(I_k, mask) if not m]
                    splits.append((S1, S2))
            for S1, S2 in splits:
                slack = (
                    numerical_rank(J[S1, :], rank_tol)
                    + numerical_rank(J[S2, :], rank_tol)
                    - r_total
                    - 1
                )
                margin = min(margin, float(slack))
                if slack < 0:
                    probe_ok = False
                    witnesses.append(
                        _witness(z, {"slot": k + 1, "split": [[i + 1 for i in S1], [i + 1 for i in S2]]}, slack)
                    )
        if probe_ok:
            passed_probes += 1
    if margin == np.inf:
        margin = 0.0
    return CheckReport(
        name="irreducibility",
        passed=passed_probes == len(probes),
        margin=float(margin),
        witnesses=witnesses,
        probes_used=len(probes),
        probes_passed=passed_probes,
    )


def additivity_check(
    f: VectorFn,
    partition: SlotPartition,
    probes,
    tol: float | None = None,
    cfg: StencilConfig = StencilConfig(),
) -> CheckReport:
    """Additivity across slots is exactly a block-diagonal Hessian, so this
    delegates to the order-1 cross bound."""
    rep = check_order_at_most_n(f, partition, 1, probes, tol, cfg)
    rep.name = "additivity"
    rep.details["delegates_to"] = "order_at_most_1"
    return rep


def sufficient_nonlinearity_check(
    f: VectorFn,
    partition: SlotPartition,
    probes,
    rank_tol: float = RANK_TOL,
    cfg: StencilConfig = StencilConfig(),
) -> CheckReport:
    """W(z) = [per-block first derivatives | per-block unordered within-block
    second derivatives] must have full column rank at every probe."""
    probes = _as_probes(probes)
    witnesses = []
    worst_gap = 0
    passed_probes = 0
    for z in probes:
        J = jacobian(f, z, cfg).values
        cols = []
        for k, b in enumerate(partition.blocks):
            cols.extend(J[:, i] for i in b)
            for i, j in itertools.combinations_with_replacement(b, 2):
                cols.append(cross_partial(f, z, (i, j), cfg))
        W = np.stack(cols, axis=1)
        r = numerical_rank(W, rank_tol)
        gap = W.shape[1] - r
        worst_gap = max(worst_gap, gap)
        if gap == 0:
            passed_probes += 1
        else:
            witnesses.append(_witness(z, {"rank": r, "columns": W.shape[1]}, gap))
    return CheckReport(
        name="sufficient_nonlinearity",
        passed=passed_probes == len(probes),
        margin=float(-worst_gap),
        witnesses=witnesses,
        probes_used=len(probes),
        probes_passed=passed_probes,
    )
