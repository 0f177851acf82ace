"""Representation evaluation procedures.

Dissimilarity matrices (instance RDM, concept CSM, taxonomy ground
truth), average-linkage ordering, silhouette, one-shot / OOD probes,
triplet odd-one-out, n-way retrieval, Pearson correlation, and the
PCA-manifold operations (consistency test, interpolation, arithmetic,
summarization). Everything is pure over immutable inputs; trial loops
draw per-trial generators from the caller's seed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import leaves_list, linkage
from scipy.spatial.distance import squareform


class EvalError(ValueError):
    """Invalid evaluation input."""


def _as_matrix(x) -> np.ndarray:
    m = np.asarray(getattr(x, "matrix", x), dtype=np.float64)
    if m.ndim != 2:
        raise EvalError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def _category_ids(x) -> list:
    ids = getattr(x, "category_ids", None)
    if ids is None:
        raise EvalError("input lacks category_ids")
    return list(ids)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.maximum(norms, 1e-300)


def cosine_distances(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """1 - cosine similarity between rows; zero-norm rows count as orthogonal."""
    ua = _unit_rows(np.asarray(a, dtype=np.float64))
    ub = ua if b is None else _unit_rows(np.asarray(b, dtype=np.float64))
    return 1.0 - ua @ ub.T


# ------------------------------------------------------------ domain types


@dataclass
class DissimMatrix:
    values: np.ndarray
    row_labels: list
    warning: str | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise EvalError("dissimilarity matrix must be square")
        if len(self.row_labels) != v.shape[0]:
            raise EvalError("label count must match matrix size")
        if not np.allclose(v, v.T, atol=1e-9):
            raise EvalError("dissimilarity matrix must be symmetric")
        v = 0.5 * (v + v.T)
        np.fill_diagonal(v, 0.0)
        self.values = v


@dataclass
class Taxonomy:
    nodes: set
    edges: set
    concrete_leaves: set = field(default_factory=set)

    def __post_init__(self):
        self.edges = {frozenset(e) for e in self.edges}
        for e in self.edges:
            if len(e) != 2 or not e <= self.nodes:
                raise EvalError(f"edge {set(e)} not between two known nodes")
        if not self.concrete_leaves <= self.nodes:
            raise EvalError("leaves must be nodes")

    def neighbors(self, node) -> list:
        return [next(iter(e - {node})) for e in self.edges if node in e]


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray


@dataclass
class ProbeResult:
    task_name: str
    accuracy: float
    n_trials: int
    per_trial: list | None = None
    mean_similarity: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise EvalError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.per_trial is not None:
            if abs(self.accuracy - float(np.mean(self.per_trial))) > 1e-9:
                raise EvalError("accuracy inconsistent with per-trial values")


# ---------------------------------------------------------------------- PCA


def pca_fit(data, n_components: int) -> PcaModel:
    """Principal components from the eigendecomposition of the covariance."""
    m = _as_matrix(data)
    n, d = m.shape
    if not 1 <= n_components <= min(n, d):
        raise EvalError(f"n_components={n_components} out of range for {n}x{d} data")
    mean = m.mean(axis=0)
    centered = m - mean
    cov = centered.T @ centered / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    return PcaModel(
        mean=mean,
        components=eigvecs[:, order].T,
        explained_variance=np.maximum(eigvals[order], 0.0),
    )


def pca_project(model: PcaModel, data) -> np.ndarray:
    m = _as_matrix(data)
    return (m - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, projected) -> np.ndarray:
    z = np.asarray(projected, dtype=np.float64)
    return z @ model.components + model.mean


# ------------------------------------------------------- dissim matrices


def compute_rdm(embeddings, n_components: int = 8) -> DissimMatrix:
    """Instance dissimilarity after truncating to the leading components.

    Rows are reconstructed from their top principal components and
    compared by cosine distance, so with full-rank components the RDM
    equals the plain pairwise cosine distance of the input. Inputs with
    rank below n_components are reduced to their actual rank and the
    result carries a warning.
    """
    m = _as_matrix(embeddings)
    n, d = m.shape
    if not 1 <= n_components <= min(n, d):
        raise EvalError(f"n_components={n_components} out of range for {n}x{d} data")
    labels = list(getattr(embeddings, "instance_ids", range(n)))
    centered = m - m.mean(axis=0)
    spectrum = np.linalg.svd(centered, compute_uv=False)
    rank = int(np.sum(spectrum > 1e-10 * max(spectrum[0], 1.0)))
    warning = None
    if rank < n_components:
        warning = f"rank {rank} below requested {n_components} components; reduced"
        n_components = rank
    if n_components == 0:
        return DissimMatrix(np.zeros((n, n)), labels, warning)
    model = pca_fit(m, n_components)
    recon = pca_inverse(model, pca_project(model, m))
    return DissimMatrix(cosine_distances(recon), labels, warning)


def compute_csm(embeddings) -> DissimMatrix:
    """Concept-level dissimilarity: cosine distance of category centroids."""
    m = _as_matrix(embeddings)
    cats = _category_ids(embeddings)
    order = sorted(set(cats))
    if len(order) < 2:
        raise EvalError("need at least 2 categories")
    ids = np.asarray(cats)
    centroids = np.vstack([m[ids == c].mean(axis=0) for c in order])
    return DissimMatrix(cosine_distances(centroids), order)


def taxonomy_csm(tax: Taxonomy, labels: list) -> DissimMatrix:
    """Unweighted shortest-path lengths between label pairs."""
    missing = [l for l in labels if l not in tax.nodes]
    if missing:
        raise EvalError(f"labels not in taxonomy: {missing}")
    adjacency = {node: tax.neighbors(node) for node in tax.nodes}
    values = np.zeros((len(labels), len(labels)))
    for a, source in enumerate(labels):
        dist = {source: 0}
        queue = deque([source])
        while queue:
            cur = queue.popleft()
            for nxt in adjacency[cur]:
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
        for b, target in enumerate(labels):
            if target not in dist:
                raise EvalError(f"no path between {source!r} and {target!r}")
            values[a, b] = dist[target]
    return DissimMatrix(values, list(labels))


def cluster_order(matrix: DissimMatrix) -> list:
    """Left-to-right leaf order of the average-linkage dendrogram."""
    n = len(matrix.row_labels)
    if n == 1:
        return list(matrix.row_labels)
    condensed = squareform(matrix.values, checks=False)
    leaves = leaves_list(linkage(condensed, method="average"))
    return [matrix.row_labels[i] for i in leaves]


# ---------------------------------------------------------------- silhouette


def silhouette(embeddings, labels) -> float:
    """Mean silhouette with cosine distance; singleton clusters score 0."""
    m = _as_matrix(embeddings)
    labels = list(labels)
    if len(labels) != m.shape[0]:
        raise EvalError("one label per row required")
    groups = sorted(set(labels))
    if len(groups) < 2:
        raise EvalError("need at least 2 distinct labels")
    ids = np.asarray(labels)
    dist = cosine_distances(m)
    scores = np.zeros(m.shape[0])
    masks = {g: ids == g for g in groups}
    for i in range(m.shape[0]):
        own = masks[labels[i]]
        if own.sum() == 1:
            continue
        a = dist[i][own].sum() / (own.sum() - 1)
        b = min(dist[i][masks[g]].mean() for g in groups if g != labels[i])
        denom = max(a, b)
        if denom > 0:
            scores[i] = (b - a) / denom
    return float(scores.mean())


# ------------------------------------------------------- logistic probes


def _fit_logreg(x: np.ndarray, targets: np.ndarray, classes: int, l2: float) -> np.ndarray:
    """Multinomial logistic regression by full-batch gradient descent.

    Minimizes mean cross-entropy + 0.5*l2*|W|^2 (bias unpenalized) to
    gradient norm 1e-6. The step size is the inverse of a Lipschitz
    bound, so descent is monotone and deterministic.
    """
    n, d = x.shape
    onehot = np.zeros((n, classes))
    onehot[np.arange(n), targets] = 1.0
    w = np.zeros((d, classes))
    b = np.zeros((1, classes))
    lam = 0.5 * float(np.linalg.norm(x, 2) ** 2) / n + l2 + 0.5
    step = 1.0 / lam
    for _ in range(100_000):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        gw = x.T @ (p - onehot) / n + l2 * w
        gb = (p - onehot).sum(axis=0, keepdims=True) / n
        if np.sqrt(np.sum(gw**2) + np.sum(gb**2)) < 1e-6:
            break
        w -= step * gw
        b -= step * gb
    return np.vstack([w, b])


def _predict_logreg(wb: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.argmax(x @ wb[:-1] + wb[-1:], axis=1)


def one_shot_probe(train, test=None, l2: float = 1.0, trials: int = 100, seed: int = 0) -> ProbeResult:
    """One exemplar per class, linear readout, accuracy on the rest.

    Each trial samples one training row per category from `train`
    (seeded), fits the regularized multinomial readout, and scores it on
    `test` when given, else on the unsampled remainder of `train`.
    """
    m = _as_matrix(train)
    cats = _category_ids(train)
    order = sorted(set(cats))
    if len(order) < 2:
        raise EvalError("need at least 2 classes")
    ids = np.asarray(cats)
    targets = {c: t for t, c in enumerate(order)}
    if test is not None:
        test_m = _as_matrix(test)
        test_cats = _category_ids(test)
        if test_m.shape[1] != m.shape[1]:
            raise EvalError(
                f"train ({m.shape[1]}-d) and test ({test_m.shape[1]}-d) must share a space"
            )
        absent = sorted(set(order) - set(test_cats))
        if absent:
            raise EvalError(f"classes absent from test: {absent}")
        unknown = sorted(set(test_cats) - set(order))
        if unknown:
            raise EvalError(f"test classes unseen in train: {unknown}")
        test_y = np.array([targets[c] for c in test_cats])
    per_trial = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        picked = np.array([rng.choice(np.flatnonzero(ids == c)) for c in order])
        wb = _fit_logreg(m[picked], np.arange(len(order)), len(order), l2)
        if test is not None:
            pred = _predict_logreg(wb, test_m)
            per_trial.append(float(np.mean(pred == test_y)))
        else:
            rest = np.setdiff1d(np.arange(len(ids)), picked)
            if len(rest) == 0:
                raise EvalError("no held-out instances to score")
            pred = _predict_logreg(wb, m[rest])
            truth = np.array([targets[c] for c in ids[rest]])
            per_trial.append(float(np.mean(pred == truth)))
    return ProbeResult("one_shot", float(np.mean(per_trial)), trials, per_trial)


def ood_probe(
    train,
    test,
    targets: dict,
    per_class: int = 5,
    trials: int = 100,
    seed: int = 0,
) -> ProbeResult:
    """Binary readout trained on two sampled known classes, scored on
    instances of categories never seen in training."""
    values = set(targets.values())
    if values != {0, 1}:
        raise EvalError(f"targets must be binary 0/1, got {sorted(values)}")
    m = _as_matrix(train)
    cats = _category_ids(train)
    test_m = _as_matrix(test)
    test_cats = _category_ids(test)
    overlap = sorted(set(cats) & set(test_cats))
    if overlap:
        raise EvalError(f"test categories must be disjoint from train: {overlap}")
    unmapped = sorted((set(cats) | set(test_cats)) - set(targets))
    if unmapped:
        raise EvalError(f"categories missing from target map: {unmapped}")
    ids = np.asarray(cats)
    cat_order = sorted(set(cats))
    sides = {targets[c] for c in cat_order}
    if sides != {0, 1}:
        raise EvalError("train needs at least one category per binary side")
    test_y = np.array([targets[c] for c in test_cats])
    per_trial = []
    for trial in range(trials):
        # category choice and instance draws are keyed independently of the
        # target map, so flipping the map mirrors the fit exactly
        rng = np.random.default_rng([seed, trial])
        perm = rng.permutation(len(cat_order))
        chosen: dict[int, str] = {}
        for idx in perm:
            chosen.setdefault(targets[cat_order[idx]], cat_order[idx])
            if len(chosen) == 2:
                break
        rows, ys = [], []
        for side in (0, 1):
            cat = chosen[side]
            members = np.flatnonzero(ids == cat)
            if len(members) < per_class:
                raise EvalError(f"category {cat!r} has fewer than {per_class} instances")
            crng = np.random.default_rng([seed, trial, cat_order.index(cat)])
            rows.append(m[crng.choice(members, size=per_class, replace=False)])
            ys.extend([side] * per_class)
        wb = _fit_logreg(np.vstack(rows), np.array(ys), 2, l2=1.0)
        pred = _predict_logreg(wb, test_m)
        per_trial.append(float(np.mean(pred == test_y)))
    return ProbeResult("ood", float(np.mean(per_trial)), trials, per_trial)


# ----------------------------------------------------- similarity judgments


def triplet_odd_one_out(embeddings, triplets) -> ProbeResult:
    """Odd one out = the item excluded from the most similar pair."""
    m = _as_matrix(embeddings)
    hits = []
    for entry in triplets:
        i, j, k, choice = entry
        if len({i, j, k}) != 3:
            raise EvalError(f"triplet {(i, j, k)} has duplicate indices")
        trio = [i, j, k]
        x = m[trio] @ m[trio].T
        best, best_pair = -np.inf, None
        for a in range(3):
            for b in range(a + 1, 3):
                if x[a, b] > best:
                    best, best_pair = x[a, b], (a, b)
        odd = trio[next(s for s in range(3) if s not in best_pair)]
        hits.append(float(odd == choice))
    if not hits:
        raise EvalError("no triplets given")
    return ProbeResult("triplet_odd_one_out", float(np.mean(hits)), len(hits), hits)


def nway_retrieval(
    queries,
    gallery,
    n: int,
    trials: int = 500,
    distinct_categories: bool = False,
    seed: int = 0,
) -> ProbeResult:
    """Top-1 retrieval among the target plus n-1 distractor categories.

    Query row t is paired with gallery row t. Each trial picks a query
    (seeded) and n-1 distractor categories; the candidate pool is the
    paired gallery item plus every item of the distractor categories
    (reduced to the best item per category when distinct_categories).
    A hit means the paired item wins; similarity ties go to the lowest
    gallery index.
    """
    q = _as_matrix(queries)
    g = _as_matrix(gallery)
    cats = _category_ids(gallery)
    if q.shape[0] != g.shape[0]:
        raise EvalError("queries and gallery must be index-paired")
    if q.shape[1] != g.shape[1]:
        raise EvalError(
            f"queries ({q.shape[1]}-d) and gallery ({g.shape[1]}-d) must share a space"
        )
    order = sorted(set(cats))
    if not 2 <= n <= len(order):
        raise EvalError(f"n={n} out of range for {len(order)} categories")
    ids = np.asarray(cats)
    qn = _unit_rows(q)
    gn = _unit_rows(g)
    per_trial = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        t = int(rng.integers(q.shape[0]))
        own = cats[t]
        others = [c for c in order if c != own]
        distract = rng.choice(len(others), size=n - 1, replace=False)
        pool = [t]
        for di in distract:
            pool.extend(np.flatnonzero(ids == others[di]))
        pool = np.asarray(pool)
        sims = gn[pool] @ qn[t]
        if distinct_categories:
            keep: dict = {}
            for slot in range(len(pool)):
                c = cats[pool[slot]]
                if c not in keep:
                    keep[c] = slot
                    continue
                cur = keep[c]
                if sims[slot] > sims[cur] or (sims[slot] == sims[cur] and pool[slot] < pool[cur]):
                    keep[c] = slot
            slots = sorted(keep.values())
            pool, sims = pool[slots], sims[slots]
        tied = np.flatnonzero(sims == np.max(sims))
        winner = int(np.min(pool[tied]))
        per_trial.append(float(winner == t))
    return ProbeResult("nway_retrieval", float(np.mean(per_trial)), trials, per_trial)


# ------------------------------------------------------------------ pearson


def _pearson_r(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise EvalError("zero-variance input to pearson")
    return float(a @ b / (na * nb))


def pearson(a, b, mode: str = "matrixwise") -> float:
    """Pearson r between matching entries.

    matrixwise compares flattened values, restricted to the strict upper
    triangle when both inputs are square and symmetric; rowwise averages
    the per-row r, skipping the diagonal entry on square inputs.
    """
    av = np.asarray(getattr(a, "values", a), dtype=np.float64)
    bv = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if av.shape != bv.shape:
        raise EvalError(f"shape mismatch {av.shape} vs {bv.shape}")
    if av.ndim == 1:
        return _pearson_r(av, bv)
    if av.ndim != 2:
        raise EvalError("pearson expects vectors or matrices")
    if mode == "matrixwise":
        square = av.shape[0] == av.shape[1]
        if square and np.allclose(av, av.T, atol=1e-9) and np.allclose(bv, bv.T, atol=1e-9):
            iu = np.triu_indices(av.shape[0], k=1)
            return _pearson_r(av[iu], bv[iu])
        return _pearson_r(av.ravel(), bv.ravel())
    if mode == "rowwise":
        values = []
        square = av.shape[0] == av.shape[1]
        for i in range(av.shape[0]):
            keep = np.ones(av.shape[1], dtype=bool)
            if square:
                keep[i] = False
            values.append(_pearson_r(av[i][keep], bv[i][keep]))
        return float(np.mean(values))
    raise EvalError(f"unknown mode {mode!r}")


# ------------------------------------------------------------- manifold ops


def _centroids_by_label(m: np.ndarray, labels: list) -> tuple[list, np.ndarray]:
    order = sorted(set(labels))
    ids = np.asarray(labels)
    return order, np.vstack([m[ids == c].mean(axis=0) for c in order])


def nearest_centroid_label(vector, embeddings) -> str:
    """Label of the category centroid most cosine-similar to the vector."""
    m = _as_matrix(embeddings)
    order, centroids = _centroids_by_label(m, _category_ids(embeddings))
    sims = 1.0 - cosine_distances(np.atleast_2d(vector), centroids)[0]
    return order[int(np.argmax(sims))]


def manifold_consistency(
    pca: PcaModel,
    real_points,
    abstract_labels: dict,
    n_samples: int = 1000,
    low: float = -5.0,
    high: float = 5.0,
    seed: int = 0,
) -> ProbeResult:
    """Sample the 2-D PCA plane uniformly, reconstruct, and check that the
    nearest-centroid label matches the label of the nearest real point."""
    if pca.components.shape[0] != 2:
        raise EvalError("manifold consistency needs a 2-component model")
    if not abstract_labels:
        raise EvalError("empty label map")
    m = _as_matrix(real_points)
    cats = _category_ids(real_points)
    missing = sorted(set(cats) - set(abstract_labels))
    if missing:
        raise EvalError(f"categories missing from label map: {missing}")
    labels = [abstract_labels[c] for c in cats]
    order, centroids = _centroids_by_label(m, labels)
    centroid_row = {lab: centroids[i] for i, lab in enumerate(order)}
    rng = np.random.default_rng(seed)
    points = rng.uniform(low, high, size=(n_samples, 2))
    recon = pca_inverse(pca, points)
    to_real = cosine_distances(recon, m)
    to_centroid = cosine_distances(recon, centroids)
    hits, sims = [], []
    for s in range(n_samples):
        truth = labels[int(np.argmin(to_real[s]))]
        pred = order[int(np.argmin(to_centroid[s]))]
        hits.append(float(pred == truth))
        rec, cen = recon[s], centroid_row[truth]
        denom = max(np.linalg.norm(rec) * np.linalg.norm(cen), 1e-300)
        sims.append(float(rec @ cen / denom))
    return ProbeResult(
        "manifold_consistency",
        float(np.mean(hits)),
        n_samples,
        hits,
        mean_similarity=float(np.mean(sims)),
    )


def interpolate(a, b, t: float) -> np.ndarray:
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.shape != bv.shape:
        raise EvalError("interpolation endpoints must share dimension")
    if not 0.0 <= t <= 1.0:
        raise EvalError(f"t={t} outside [0, 1]")
    return (1.0 - t) * av + t * bv


def concept_arithmetic(query, minus, plus) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).ravel()
    m = np.asarray(minus, dtype=np.float64).ravel()
    p = np.asarray(plus, dtype=np.float64).ravel()
    if not q.shape == m.shape == p.shape:
        raise EvalError("arithmetic operands must share dimension")
    return q - m + p


def summarize(rows) -> np.ndarray:
    m = _as_matrix(rows)
    if m.shape[0] == 0:
        raise EvalError("cannot summarize an empty set")
    return m.mean(axis=0)
