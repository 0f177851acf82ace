"""Synthetic paired-domain benchmark.

Two observation domains of the same underlying categories: prototypes
live on the unit sphere of a shared latent space, split between two
antipodal superclasses, and each domain sees them through its own fixed
linear distortion plus per-instance noise. The domains are therefore
structure-isomorphic by construction, which is exactly what the
alignment loop is supposed to recover. A disjoint category subset is
held out for generalization measurements.

Category ids carry their superclass as a prefix ("g0/c003"), so binary
superclass targets can be derived from ids alone.
"""

from __future__ import annotations

import numpy as np

from .data import EmbeddingSet


class SynthError(ValueError):
    """Invalid generator parameters."""


def superclass_of(category_id: str) -> str:
    """The "g0"/"g1" prefix of a generated category id."""
    return category_id.split("/", 1)[0]


def _domain_set(
    instances: np.ndarray,
    distortion: np.ndarray,
    noise: float,
    rng: np.random.Generator,
    instance_ids: list[str],
    category_ids: list[str],
    meta: str,
) -> EmbeddingSet:
    observed = instances @ distortion
    if noise > 0.0:
        observed = observed + noise * rng.normal(size=observed.shape)
    return EmbeddingSet(
        matrix=observed,
        instance_ids=instance_ids,
        category_ids=category_ids,
        meta=meta,
    )


def isomorphic_clusters(
    n_categories: int = 26,
    per_category: int = 30,
    dim_x: int = 64,
    dim_y: int = 48,
    noise: float = 0.05,
    seed: int = 0,
    heldout_fraction: float = 0.25,
    latent_dim: int = 16,
    identical_distortions: bool = False,
) -> tuple[EmbeddingSet, EmbeddingSet, EmbeddingSet, EmbeddingSet]:
    """Generate (x_train, y_train, x_heldout, y_heldout).

    Prototypes cluster around two antipodal superclass directions; the
    held-out split is stratified so both superclasses stay represented.
    The x domain is observed through an ill-conditioned distortion with
    doubled noise (the "messy" domain), y through a well-conditioned one.
    With identical_distortions the two domains share the y distortion,
    which together with noise=0 makes them exactly isometric.
    """
    if n_categories < 4:
        raise SynthError("need at least 4 categories")
    if per_category < 1 or dim_x < 2 or dim_y < 2 or latent_dim < 2:
        raise SynthError("sizes must be positive (dims and latent_dim at least 2)")
    if noise < 0.0:
        raise SynthError("noise must be nonnegative")
    if not 0.0 < heldout_fraction < 1.0:
        raise SynthError("heldout_fraction must lie in (0, 1)")

    rng = np.random.default_rng(seed)
    axis = rng.normal(size=latent_dim)
    axis /= np.linalg.norm(axis)

    prototypes = np.zeros((n_categories, latent_dim))
    category_ids = []
    supers = []
    for c in range(n_categories):
        s = c % 2
        center = axis if s == 0 else -axis
        p = center + 0.6 * rng.normal(size=latent_dim)
        prototypes[c] = p / np.linalg.norm(p)
        category_ids.append(f"g{s}/c{c:03d}")
        supers.append(s)

    # every instance sits at its prototype; all within-category variation
    # comes from per-domain observation noise, so noise=0 is exactly isometric
    inst_ids, cat_of_row = [], []
    for c in range(n_categories):
        for k in range(per_category):
            inst_ids.append(f"{category_ids[c]}/i{k:03d}")
            cat_of_row.append(category_ids[c])
    instances = np.repeat(prototypes, per_category, axis=0)

    # well-conditioned map for y; ill-conditioned (decaying spectrum) for x
    def random_map(out_dim: int, decay: float) -> np.ndarray:
        g = rng.normal(size=(latent_dim, out_dim))
        u, _, vt = np.linalg.svd(g, full_matrices=False)
        spectrum = np.exp(-decay * np.arange(min(latent_dim, out_dim)))
        return u @ np.diag(spectrum) @ vt

    if identical_distortions and dim_x != dim_y:
        raise SynthError("identical distortions require dim_x == dim_y")
    map_y = random_map(dim_y, decay=0.05)
    map_x = map_y if identical_distortions else random_map(dim_x, decay=0.35)

    # stratified held-out split: alternate superclasses to keep both present
    n_held = max(2, int(round(n_categories * heldout_fraction)))
    perm = rng.permutation(n_categories)
    pools = {s: [int(c) for c in perm if supers[c] == s] for s in (0, 1)}
    held, want = [], 0
    while len(held) < n_held:
        pool = pools[want] if pools[want] else pools[1 - want]
        held.append(pool.pop(0))
        want = 1 - want
    held_set = {category_ids[c] for c in held}

    meta = f"synth:isomorphic_clusters seed={seed} n={n_categories}x{per_category}"
    train_rows = [i for i, c in enumerate(cat_of_row) if c not in held_set]
    held_rows = [i for i, c in enumerate(cat_of_row) if c in held_set]

    noise_x = 2.0 * noise
    full_x = _domain_set(
        instances, map_x, noise_x, rng, inst_ids, cat_of_row, meta + " domain=x"
    )
    full_y = _domain_set(
        instances, map_y, noise, rng, inst_ids, cat_of_row, meta + " domain=y"
    )
    return (
        full_x.select(train_rows),
        full_y.select(train_rows),
        full_x.select(held_rows),
        full_y.select(held_rows),
    )


def make(kind: str, **kwargs) -> tuple[EmbeddingSet, EmbeddingSet, EmbeddingSet, EmbeddingSet]:
    """Dispatch by benchmark kind (only isomorphic_clusters for now)."""
    if kind != "isomorphic_clusters":
        raise SynthError(f"unknown synth kind {kind!r}")
    return isomorphic_clusters(**kwargs)
