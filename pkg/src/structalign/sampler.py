"""Differentiable local-structure construction.

Neighborhoods around each putative correspondence are drawn with a
Gumbel-Softmax categorical over dot-product similarities, hardened by a
straight-through argmax, K times without replacement. The drawn index
sets give the two structure matrices (cosine self-similarities) that the
structural loss compares.

Selection is "dynamic": it reads the current latents, so as training
moves points around, the neighborhoods follow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ot

# finite stand-in for -inf so masked logits survive the tape's finiteness checks
MASKED_LOGIT = -1e30


class SamplerError(ValueError):
    """Invalid sampling request (too few points, k out of range, ...)."""


@dataclass
class NeighborScores:
    """One categorical draw around an anchor.

    soft holds the Gumbel-perturbed softmax over candidates (anchor
    excluded), hard the straight-through one-hot once selected.
    candidate_indices maps score slots back to global point indices.
    """

    soft: np.ndarray
    hard: np.ndarray | None
    source_index: int
    candidate_indices: np.ndarray
    gumbel_seed: int
    masked_candidates: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))

    def selected_index(self) -> int:
        """Global index of the hardened selection."""
        if self.hard is None:
            raise SamplerError("scores have not been hardened")
        return int(self.candidate_indices[int(np.argmax(self.hard))])


@dataclass
class CorrespondenceSet:
    """Putative matches (x_index, y_index, plan mass) plus ground truth."""

    pairs: list[tuple[int, int, float]]
    ground_truth: set[tuple[int, int]] = field(default_factory=set)

    def mapping(self) -> dict[int, int]:
        return {i: j for i, j, _ in self.pairs}


@dataclass
class LocalStructure:
    """Neighborhoods around one putative correspondence.

    cx/cy are the cosine self-similarity structures of the selected
    neighbors; true_count (W) and false_set (V) grade the proposed
    correspondences that fall inside the neighborhood pair against the
    ground truth. Slots in false_set index into x_neighbors/y_neighbors.
    """

    anchor: tuple[int, int]
    x_neighbors: np.ndarray
    y_neighbors: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    true_count: int
    false_set: list[tuple[int, int]]
    x_draws: list[NeighborScores] = field(default_factory=list)
    y_draws: list[NeighborScores] = field(default_factory=list)


def gumbel_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    u = rng.random(size)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return -np.log(-np.log(u))


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return e / e.sum()


def derive_seed(*parts: int) -> int:
    """Stable scalar seed from a tuple (base seed, pair index, side, draw)."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


def gumbel_scores(
    anchor_index: int,
    embeddings,
    seed: int,
    noise: bool = True,
    masked: np.ndarray | None = None,
) -> NeighborScores:
    """Score the anchor's candidates: softmax(x_a . x_j + gumbel) over j != a.

    Logits are dot products of unit-normalized rows. `masked` lists global
    indices whose logits are pushed to the floor (drawn-without-replacement
    support). Noise is Gumbel(0,1) via -log(-log(U)) from the seeded
    generator; noise=False zeroes it.
    """
    m = np.asarray(getattr(embeddings, "matrix", embeddings), dtype=np.float64)
    n = m.shape[0]
    if n < 2:
        raise SamplerError(f"need at least 2 points, got {n}")
    if not 0 <= anchor_index < n:
        raise SamplerError(f"anchor {anchor_index} out of range for {n} points")
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise SamplerError("zero-norm row in embeddings")
    unit = m / norms
    candidates = np.array([j for j in range(n) if j != anchor_index], dtype=np.int64)
    logits = unit[candidates] @ unit[anchor_index]
    if noise:
        logits = logits + gumbel_noise(np.random.default_rng(seed), len(candidates))
    masked = np.array([], dtype=np.int64) if masked is None else np.asarray(masked, dtype=np.int64)
    if len(masked) > 0:
        blocked = np.isin(candidates, masked)
        if np.all(blocked):
            raise SamplerError("all candidates masked")
        logits = np.where(blocked, MASKED_LOGIT, logits)
    return NeighborScores(
        soft=_softmax(logits),
        hard=None,
        source_index=anchor_index,
        candidate_indices=candidates,
        gumbel_seed=seed,
        masked_candidates=masked,
    )


def harden(scores: NeighborScores) -> NeighborScores:
    """Straight-through selection: one-hot at the argmax, lowest index on ties."""
    hard = np.zeros_like(scores.soft)
    hard[int(np.argmax(scores.soft))] = 1.0
    scores.hard = hard
    return scores


def draw_neighbors(
    anchor_index: int,
    embeddings,
    k: int,
    base_seed: int,
    noise: bool = True,
) -> list[NeighborScores]:
    """K successive hardened draws without replacement around the anchor."""
    m = np.asarray(getattr(embeddings, "matrix", embeddings), dtype=np.float64)
    n = m.shape[0]
    if not 1 <= k <= n - 1:
        raise SamplerError(f"k={k} out of range for {n} points (need 1 <= k <= n-1)")
    taken: list[int] = []
    draws = []
    for d in range(k):
        seed = derive_seed(base_seed, d)
        scores = gumbel_scores(
            anchor_index, m, seed, noise=noise, masked=np.array(taken, dtype=np.int64)
        )
        harden(scores)
        taken.append(scores.selected_index())
        draws.append(scores)
    return draws


def build_local_structure(
    pair_index: int,
    correspondences: CorrespondenceSet,
    x_latents,
    y_latents,
    k1: int,
    k2: int,
    seed: int,
    noise: bool = True,
) -> LocalStructure:
    """Assemble the neighborhood pair for one putative correspondence.

    Draws k1 x-neighbors around the pair's x point and k2 y-neighbors
    around its y point, builds both structure matrices, and grades the
    putative correspondences falling inside the neighborhoods: W counts
    those confirmed by the ground truth, false_set collects the rest as
    (x_slot, y_slot) pairs.
    """
    if not 0 <= pair_index < len(correspondences.pairs):
        raise SamplerError(f"pair index {pair_index} out of range")
    xa, yb, _ = correspondences.pairs[pair_index]
    x_draws = draw_neighbors(
        xa, x_latents, k1, derive_seed(seed, pair_index, 0), noise=noise
    )
    y_draws = draw_neighbors(
        yb, y_latents, k2, derive_seed(seed, pair_index, 1), noise=noise
    )
    x_sel = np.array([d.selected_index() for d in x_draws], dtype=np.int64)
    y_sel = np.array([d.selected_index() for d in y_draws], dtype=np.int64)

    xm = np.asarray(getattr(x_latents, "matrix", x_latents), dtype=np.float64)
    ym = np.asarray(getattr(y_latents, "matrix", y_latents), dtype=np.float64)
    structure = LocalStructure(
        anchor=(xa, yb),
        x_neighbors=x_sel,
        y_neighbors=y_sel,
        cx=structure_matrix(xm[x_sel]),
        cy=structure_matrix(ym[y_sel]),
        true_count=0,
        false_set=[],
        x_draws=x_draws,
        y_draws=y_draws,
    )
    grade_structure(structure, correspondences)
    return structure


def structure_matrix(points: np.ndarray) -> np.ndarray:
    """Cosine self-similarity structure; a single point gives [[0]]."""
    if points.shape[0] == 1:
        return np.zeros((1, 1))
    return ot.self_similarity(points)


def grade_structure(structure: LocalStructure, correspondences: CorrespondenceSet) -> None:
    """Fill true_count (W) and false_set (V) from the putative mapping.

    A correspondence (p, q) is "inside" the structure when p was selected
    on the x side and q on the y side; it is true when the ground truth
    confirms it. W <= min(K1, K2) because the mapping is a function of p.
    """
    mapping = correspondences.mapping()
    y_slot = {int(q): j for j, q in enumerate(structure.y_neighbors)}
    w = 0
    false_set = []
    for i, p in enumerate(structure.x_neighbors):
        q = mapping.get(int(p))
        if q is None or q not in y_slot:
            continue
        if (int(p), q) in correspondences.ground_truth:
            w += 1
        else:
            false_set.append((i, y_slot[q]))
    assert w <= min(len(structure.x_neighbors), len(structure.y_neighbors))
    structure.true_count = w
    structure.false_set = false_set
