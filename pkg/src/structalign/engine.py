"""The alternating alignment loop.

Two encoders map their domains into one latent space, an attention
refiner produces matching features, and Sinkhorn proposes putative
correspondences. Training alternates two steps per batch: step A
backprops the assignment loss L_W through the (by default unrolled)
transport plan; step B rebuilds sampled local structures from the
updated latents and backprops the structural loss L_GW through the
straight-through sampler. The GW coupling inside L_GW is treated as
data (no gradient through the inner solver); gradients reach the
latents through the structure matrices and the sampled score vectors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ot, sampler
from . import tensor as T
from .sampler import CorrespondenceSet, LocalStructure

LOG_FLOOR = 1e-12


class EngineError(ValueError):
    """Bad engine configuration or input."""


# ------------------------------------------------------------------- configs


@dataclass
class EncoderSpec:
    """An MLP encoder: ReLU hidden layers, linear output, unit-normalized rows."""

    input_dim: int
    output_dim: int
    layer_sizes: list[int] = field(default_factory=lambda: [256])
    kind: str = "mlp"
    activation: str = "relu"

    def validate(self) -> None:
        if self.kind != "mlp":
            raise EngineError(f"unknown encoder kind {self.kind!r}")
        if self.activation != "relu":
            raise EngineError(f"unknown activation {self.activation!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise EngineError("encoder dims must be positive")
        if any(h < 1 for h in self.layer_sizes):
            raise EngineError("hidden sizes must be positive")


@dataclass
class RefinerSpec:
    """Alternating self/cross attention stack shared by both point sets."""

    layers: int = 3
    heads: int = 4
    head_dim: int | None = None

    def validate(self, latent_dim: int) -> None:
        if self.layers < 0:
            raise EngineError("refiner layers must be >= 0")
        if self.heads < 1:
            raise EngineError("refiner heads must be >= 1")
        if self.resolved_head_dim(latent_dim) < 1:
            raise EngineError("head_dim must be >= 1 (latent_dim // heads too small)")

    def resolved_head_dim(self, latent_dim: int) -> int:
        return self.head_dim if self.head_dim is not None else latent_dim // self.heads


@dataclass
class AlignmentConfig:
    epsilon: float = 1.0
    lambda1: float = 0.1
    lambda2: float = 100.0
    k1: int = 20
    k2: int = 20
    sinkhorn_iters: int = 100
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    latent_dim: int = 32
    encoder_hidden: list[int] = field(default_factory=lambda: [256])
    refiner_layers: int = 3
    refiner_heads: int = 4
    structures_per_batch: int = 16
    loss_gw_epsilon: float = 0.05
    gw_epsilon: float = 0.01
    alternation: str = "batch"
    detach_plan: bool = False
    sampler_noise: bool = True

    def validate(self) -> None:
        positive = {
            "epsilon": self.epsilon,
            "lambda2": self.lambda2,
            "sinkhorn_iters": self.sinkhorn_iters,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "latent_dim": self.latent_dim,
            "structures_per_batch": self.structures_per_batch,
            "loss_gw_epsilon": self.loss_gw_epsilon,
            "gw_epsilon": self.gw_epsilon,
        }
        for name, value in positive.items():
            if not value > 0:
                raise EngineError(f"{name} must be positive, got {value}")
        if self.lambda1 < 0 or self.lr < 0:
            raise EngineError("lambda1 and lr must be nonnegative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise EngineError("betas must lie in [0, 1)")
        if not (1 <= self.k1 < self.batch_size and 1 <= self.k2 < self.batch_size):
            raise EngineError("k1 and k2 must satisfy 1 <= k < batch_size")
        if self.alternation not in ("batch", "epoch"):
            raise EngineError(f"alternation must be 'batch' or 'epoch', got {self.alternation!r}")

    def adam(self) -> T.AdamConfig:
        return T.AdamConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2)


# --------------------------------------------------------------------- model


@dataclass
class AlignmentModel:
    signal_encoder: EncoderSpec
    image_encoder: EncoderSpec
    refiner: RefinerSpec
    cfg: AlignmentConfig
    params: dict[str, T.Tensor]
    adam: dict[str, T.AdamState]
    step_counter: int = 0
    epoch_counter: int = 0
    grad_seen: dict[str, bool] = field(default_factory=dict)

    def scoped(self, prefix: str) -> dict[str, T.Tensor]:
        """Live view of one component's parameters (shared Tensor objects)."""
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in self.params.items() if k.startswith(prefix + ".")}


def _encoder_params(spec: EncoderSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    fan_in = spec.input_dim
    for i, width in enumerate(spec.layer_sizes):
        params[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
        params[f"b{i}"] = np.zeros((1, width))
        fan_in = width
    scale = np.sqrt(1.0 / fan_in)
    params["Wout"] = rng.normal(0.0, scale, size=(fan_in, spec.output_dim))
    params["bout"] = np.zeros((1, spec.output_dim))
    return params


def _refiner_params(
    spec: RefinerSpec, latent_dim: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    dh = spec.resolved_head_dim(latent_dim)
    params: dict[str, np.ndarray] = {}
    scale = np.sqrt(1.0 / latent_dim)
    for layer in range(spec.layers):
        for phase in ("self", "cross"):
            for head in range(spec.heads):
                base = f"L{layer}.{phase}.h{head}"
                for name in ("Wq", "Wk", "Wv"):
                    params[f"{base}.{name}"] = rng.normal(
                        0.0, scale, size=(latent_dim, dh)
                    )
            # zero output projection: the refiner starts as the identity
            params[f"L{layer}.{phase}.Wo"] = np.zeros((spec.heads * dh, latent_dim))
    return params


def init_model(x_dim: int, y_dim: int, cfg: AlignmentConfig) -> AlignmentModel:
    cfg.validate()
    sig = EncoderSpec(x_dim, cfg.latent_dim, list(cfg.encoder_hidden))
    img = EncoderSpec(y_dim, cfg.latent_dim, list(cfg.encoder_hidden))
    ref = RefinerSpec(layers=cfg.refiner_layers, heads=cfg.refiner_heads)
    sig.validate()
    img.validate()
    ref.validate(cfg.latent_dim)

    rng = np.random.default_rng(sampler.derive_seed(cfg.seed, 1))
    arrays: dict[str, np.ndarray] = {}
    for prefix, spec in (("sig", sig), ("img", img)):
        for k, v in _encoder_params(spec, rng).items():
            arrays[f"{prefix}.{k}"] = v
    for k, v in _refiner_params(ref, cfg.latent_dim, rng).items():
        arrays[f"ref.{k}"] = v

    params = {k: T.parameter(v) for k, v in arrays.items()}
    return AlignmentModel(
        signal_encoder=sig,
        image_encoder=img,
        refiner=ref,
        cfg=cfg,
        params=params,
        adam={k: T.AdamState.for_param(p) for k, p in params.items()},
        grad_seen={k: False for k in params},
    )


# ------------------------------------------------------------------- forward


def encode(spec: EncoderSpec, params: dict[str, T.Tensor], batch) -> T.Tensor:
    """Map a batch (rows are inputs) to unit-normalized latent rows."""
    h = batch if isinstance(batch, T.Tensor) else T.constant(np.asarray(batch, dtype=np.float64))
    if h.shape[1] != spec.input_dim:
        raise EngineError(f"batch dim {h.shape[1]} != encoder input {spec.input_dim}")
    for i in range(len(spec.layer_sizes)):
        h = T.relu(T.add_bias(T.matmul(h, params[f"W{i}"]), params[f"b{i}"]))
    out = T.add_bias(T.matmul(h, params["Wout"]), params["bout"])
    return T.normalize_rows(out)


def attention_weights(queries: T.Tensor, keys: T.Tensor, scale: float) -> T.Tensor:
    """Scaled dot-product attention matrix; rows sum to 1."""
    return T.softmax_rows(T.mul_scalar(T.matmul(queries, T.transpose(keys)), scale))


def _multihead(
    spec: RefinerSpec,
    params: dict[str, T.Tensor],
    layer: int,
    phase: str,
    queries: T.Tensor,
    context: T.Tensor,
    latent_dim: int,
) -> T.Tensor:
    dh = spec.resolved_head_dim(latent_dim)
    scale = 1.0 / np.sqrt(dh)
    heads = []
    for head in range(spec.heads):
        base = f"L{layer}.{phase}.h{head}"
        q = T.matmul(queries, params[f"{base}.Wq"])
        k = T.matmul(context, params[f"{base}.Wk"])
        v = T.matmul(context, params[f"{base}.Wv"])
        heads.append(T.matmul(attention_weights(q, k, scale), v))
    stacked = heads[0] if len(heads) == 1 else T.concat_cols(heads)
    return T.matmul(stacked, params[f"L{layer}.{phase}.Wo"])


def refine(
    spec: RefinerSpec,
    params: dict[str, T.Tensor],
    x_latents: T.Tensor,
    y_latents: T.Tensor,
) -> tuple[T.Tensor, T.Tensor]:
    """Alternating self/cross attention with residuals, shared across sets.

    With zero output projections every block contributes nothing and the
    latents pass through unchanged (up to re-normalization of already
    unit rows).
    """
    if x_latents.shape[1] != y_latents.shape[1]:
        raise EngineError("latent dims differ between sets")
    x, y = x_latents, y_latents
    dim = x.shape[1]
    for layer in range(spec.layers):
        sx = _multihead(spec, params, layer, "self", x, x, dim)
        sy = _multihead(spec, params, layer, "self", y, y, dim)
        x, y = T.add(x, sx), T.add(y, sy)
        cx = _multihead(spec, params, layer, "cross", x, y, dim)
        cy = _multihead(spec, params, layer, "cross", y, x, dim)
        x, y = T.add(x, cx), T.add(y, cy)
        x, y = T.normalize_rows(x), T.normalize_rows(y)
    return x, y


def forward_latents(model: AlignmentModel, x_batch, y_batch) -> tuple[T.Tensor, ...]:
    """Encoder latents and refined matching features for both domains."""
    xl = encode(model.signal_encoder, model.scoped("sig"), x_batch)
    yl = encode(model.image_encoder, model.scoped("img"), y_batch)
    xr, yr = refine(model.refiner, model.scoped("ref"), xl, yl)
    return xl, yl, xr, yr


# ---------------------------------------------------------- correspondences


def propose_correspondences(
    x_refined, y_refined, cfg: AlignmentConfig
) -> tuple[CorrespondenceSet, ot.TransportPlan]:
    """Sinkhorn on 1 - cosine of refined latents; pair = row argmax."""
    x = np.asarray(getattr(x_refined, "data", x_refined), dtype=np.float64)
    y = np.asarray(getattr(y_refined, "data", y_refined), dtype=np.float64)
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise EngineError("empty batch")
    problem = ot.TransportProblem(
        cost=ot.cosine_cost_matrix(x, y),
        mu=ot.uniform_weights(x.shape[0]),
        nu=ot.uniform_weights(y.shape[0]),
        epsilon=cfg.epsilon,
    )
    plan = ot.sinkhorn(problem, iterations=cfg.sinkhorn_iters)
    pairs = [(i, j, float(plan.plan[i, j])) for i, j in plan.pairs]
    return CorrespondenceSet(pairs=pairs), plan


# -------------------------------------------------------------------- L_W


def _gt_mask(shape: tuple[int, int], ground_truth) -> np.ndarray:
    mask = np.zeros(shape)
    for i, j in ground_truth:
        if not (0 <= i < shape[0] and 0 <= j < shape[1]):
            raise EngineError(f"ground-truth pair {(i, j)} out of range for {shape}")
        mask[i, j] = 1.0
    return mask


def loss_w(plan, similarity: np.ndarray, ground_truth, lambda1: float) -> float:
    """Assignment loss: negative log-likelihood of the plan on ground-truth
    pairs plus lambda1 times a row-softmax cross-entropy on the similarity
    matrix. Logs are clamped at 1e-12, so the value is always finite."""
    if not ground_truth:
        raise EngineError("ground truth must be nonempty")
    p = np.asarray(getattr(plan, "plan", plan), dtype=np.float64)
    s = np.asarray(similarity, dtype=np.float64)
    mask = _gt_mask(p.shape, ground_truth)
    term_plan = -float(np.sum(mask * np.log(np.maximum(p, LOG_FLOOR))))
    shifted = s - s.max(axis=1, keepdims=True)
    softmax = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    term_sim = -float(np.sum(mask * np.log(np.maximum(softmax, LOG_FLOOR))))
    return term_plan + lambda1 * term_sim


def loss_w_t(
    plan_t: T.Tensor, similarity_t: T.Tensor, ground_truth, lambda1: float
) -> T.Tensor:
    if not ground_truth:
        raise EngineError("ground truth must be nonempty")
    mask = T.constant(_gt_mask(plan_t.shape, ground_truth))
    term_plan = T.neg(T.sum_all(T.mul(mask, T.log(plan_t, floor=LOG_FLOOR))))
    log_soft = T.log(T.softmax_rows(similarity_t), floor=LOG_FLOOR)
    term_sim = T.neg(T.sum_all(T.mul(mask, log_soft)))
    return T.add(term_plan, T.mul_scalar(term_sim, lambda1))


# -------------------------------------------------------------------- L_GW


def _false_mask(structure: LocalStructure) -> np.ndarray:
    mask = np.zeros((len(structure.x_neighbors), len(structure.y_neighbors)))
    for i, j in structure.false_set:
        mask[i, j] = 1.0
    return mask


def _gw_coupling(structure: LocalStructure, epsilon: float) -> np.ndarray:
    return ot.entropic_gw(structure.cx, structure.cy, epsilon=epsilon).plan


def masked_gw_penalty(cx: np.ndarray, cy: np.ndarray, g: np.ndarray) -> float:
    """sum over masked slots of 0.5*(cx[i,k]-cy[j,l])^2 g[i,j] g[k,l]."""
    r = g.sum(axis=1)
    c = g.sum(axis=0)
    quad_x = 0.5 * float(r @ (cx * cx) @ r)
    quad_y = 0.5 * float(c @ (cy * cy) @ c)
    cross = float(np.sum((cx @ g @ cy.T) * g))
    return quad_x + quad_y - cross


def loss_gw(
    structures: list[LocalStructure],
    s_hard,
    z_soft,
    lambda2: float,
    epsilon: float,
) -> float:
    """Structural loss: cross-entropy of hardened x-side draws against
    soft y-side draws (paired positionally), plus lambda2/W times the GW
    discrepancy restricted to false correspondences. Structures with
    W = 0 skip the penalty term (the 1/W weight is undefined there)."""
    if not structures:
        raise EngineError("structures must be nonempty")
    if len(s_hard) != len(z_soft):
        raise EngineError("s_hard and z_soft must pair up one to one")
    total = 0.0
    for hard, soft in zip(s_hard, z_soft):
        h = np.asarray(getattr(hard, "hard", hard), dtype=np.float64)
        z = np.asarray(getattr(soft, "soft", soft), dtype=np.float64)
        if h.shape != z.shape:
            raise EngineError("paired score vectors must share length")
        total -= float(np.sum(h * np.log(np.maximum(z, LOG_FLOOR))))
    for s in structures:
        if s.true_count == 0 or not s.false_set:
            continue
        g = _gw_coupling(s, epsilon) * _false_mask(s)
        total += (lambda2 / s.true_count) * masked_gw_penalty(s.cx, s.cy, g)
    return total


def _structure_matrix_t(selected: T.Tensor) -> T.Tensor:
    k = selected.shape[0]
    if k == 1:
        # a single point has no internal structure and no gradient
        return T.constant(np.zeros((1, 1)))
    d = T.sub(T.constant(np.ones((k, k))), T.matmul(selected, T.transpose(selected)))
    d = T.mul_scalar(T.add(d, T.transpose(d)), 0.5)
    return T.mul(d, T.constant(1.0 - np.eye(k)))


def _replay_scores_t(latents: T.Tensor, draw: sampler.NeighborScores, noise: bool) -> T.Tensor:
    """Rebuild one draw's soft scores on the tape, replaying its noise and
    its without-replacement mask exactly."""
    cand = draw.candidate_indices
    anchor = T.gather_rows(latents, [draw.source_index])
    logits = T.transpose(T.matmul(T.gather_rows(latents, cand), T.transpose(anchor)))
    if noise:
        gamma = sampler.gumbel_noise(
            np.random.default_rng(draw.gumbel_seed), len(cand)
        )
        logits = T.add(logits, T.constant(gamma.reshape(1, -1)))
    if len(draw.masked_candidates) > 0:
        blocked = np.isin(cand, draw.masked_candidates)
        keep = (~blocked).astype(np.float64).reshape(1, -1)
        fill = np.where(blocked, sampler.MASKED_LOGIT, 0.0).reshape(1, -1)
        logits = T.add(T.mul(logits, T.constant(keep)), T.constant(fill))
    return T.softmax_rows(logits)


def _surrogate_hard_t(soft_t: T.Tensor, draw: sampler.NeighborScores) -> T.Tensor:
    """hard0 + soft - soft0: forward equals the recorded one-hot, backward
    follows the soft scores (straight-through with replayed selection)."""
    return T.add(
        T.sub(soft_t, T.constant(draw.soft.reshape(1, -1))),
        T.constant(draw.hard.reshape(1, -1)),
    )


def structural_loss_t(
    x_latents: T.Tensor,
    y_latents: T.Tensor,
    structures: list[LocalStructure],
    cfg: AlignmentConfig,
) -> T.Tensor:
    """Tape route of loss_gw over structures drawn from these latents.

    The GW coupling is recomputed from the recorded structure matrices
    and enters as a constant; gradients flow through the rebuilt cx/cy
    and through the replayed score vectors.
    """
    if not structures:
        raise EngineError("structures must be nonempty")
    total = T.scalar(0.0)
    for s in structures:
        draws = min(len(s.x_draws), len(s.y_draws))
        for k in range(draws):
            hard = _surrogate_hard_t(
                _replay_scores_t(x_latents, s.x_draws[k], cfg.sampler_noise), s.x_draws[k]
            )
            z = _replay_scores_t(y_latents, s.y_draws[k], cfg.sampler_noise)
            ce = T.neg(T.sum_all(T.mul(hard, T.log(z, floor=LOG_FLOOR))))
            total = T.add(total, ce)
        if s.true_count == 0 or not s.false_set:
            continue
        g = _gw_coupling(s, cfg.loss_gw_epsilon) * _false_mask(s)
        cx_t = _structure_matrix_t(T.gather_rows(x_latents, s.x_neighbors))
        cy_t = _structure_matrix_t(T.gather_rows(y_latents, s.y_neighbors))
        r = g.sum(axis=1).reshape(-1, 1)
        c = g.sum(axis=0).reshape(-1, 1)
        quad_x = T.matmul(T.matmul(T.constant(r.T), T.mul(cx_t, cx_t)), T.constant(r))
        quad_y = T.matmul(T.matmul(T.constant(c.T), T.mul(cy_t, cy_t)), T.constant(c))
        cross = T.sum_all(T.mul(T.matmul(T.matmul(cx_t, T.constant(g)), T.transpose(cy_t)), T.constant(g)))
        penalty = T.sub(
            T.mul_scalar(T.add(quad_x, quad_y), 0.5),
            cross,
        )
        total = T.add(total, T.mul_scalar(penalty, cfg.lambda2 / s.true_count))
    return total


# ----------------------------------------------------------------- training


@dataclass
class EpochMetrics:
    epoch: int
    loss_w: float
    loss_gw: float
    gw_train: float
    mean_true_count: float
    seed: int


@dataclass
class TrackPoint:
    step: int
    gw_train: float
    gw_heldout: float


def _batches(n: int, cfg: AlignmentConfig) -> list[np.ndarray]:
    """Deterministic epoch-independent batch assembly.

    The same batches recur every epoch so a frozen model yields a frozen
    loss sequence; tail slices too small to support k-neighbor draws are
    dropped.
    """
    order = np.random.default_rng(sampler.derive_seed(cfg.seed, 11)).permutation(n)
    minimum = max(cfg.k1, cfg.k2) + 1
    out = []
    for start in range(0, n, cfg.batch_size):
        chunk = order[start : start + cfg.batch_size]
        if len(chunk) >= minimum:
            out.append(chunk)
    if not out:
        raise EngineError(
            f"no usable batches: n={n}, batch_size={cfg.batch_size}, k={minimum - 1}"
        )
    return out


def _apply_grads(model: AlignmentModel) -> None:
    adam_cfg = model.cfg.adam()
    for name, p in model.params.items():
        if p.grad is None:
            continue
        if np.any(p.grad != 0.0):
            model.grad_seen[name] = True
        T.adam_step(p, model.adam[name], adam_cfg)
        p.zero_grad()


def _plan_tensor(cost_t: T.Tensor, cfg: AlignmentConfig) -> T.Tensor:
    n, m = cost_t.shape
    mu, nu = ot.uniform_weights(n), ot.uniform_weights(m)
    if cfg.detach_plan:
        prob = ot.TransportProblem(cost=cost_t.data, mu=mu, nu=nu, epsilon=cfg.epsilon)
        return T.constant(ot.sinkhorn(prob, iterations=cfg.sinkhorn_iters).plan)
    return ot.sinkhorn_plan_t(cost_t, mu, nu, cfg.epsilon, iterations=cfg.sinkhorn_iters)


def _step_assignment(model: AlignmentModel, xb: np.ndarray, yb: np.ndarray) -> float:
    cfg = model.cfg
    gt = {(r, r) for r in range(len(xb))}
    params = list(model.params.values())
    with T.Tape() as tape:
        xl, yl, xr, yr = forward_latents(model, xb, yb)
        similarity = T.matmul(xl, T.transpose(yl))
        cost = T.add_scalar(T.mul_scalar(T.matmul(xr, T.transpose(yr)), -1.0), 1.0)
        loss = loss_w_t(_plan_tensor(cost, cfg), similarity, gt, cfg.lambda1)
        tape.backward(loss, params)
    _apply_grads(model)
    model.step_counter += 1
    return loss.item()


def _step_structural(
    model: AlignmentModel, xb: np.ndarray, yb: np.ndarray, batch_index: int
) -> tuple[float, float]:
    cfg = model.cfg
    params = list(model.params.values())
    with T.Tape() as tape:
        xl, yl, xr, yr = forward_latents(model, xb, yb)
        corr, _ = propose_correspondences(xr, yr, cfg)
        corr.ground_truth = {(r, r) for r in range(len(xb))}

        pick_rng = np.random.default_rng(sampler.derive_seed(cfg.seed, 23, batch_index))
        count = min(cfg.structures_per_batch, len(corr.pairs))
        anchors = pick_rng.choice(len(corr.pairs), size=count, replace=False)
        base_seed = sampler.derive_seed(cfg.seed, 37, batch_index)
        structures = [
            sampler.build_local_structure(
                int(a), corr, xr.data, yr.data, cfg.k1, cfg.k2, base_seed,
                noise=cfg.sampler_noise,
            )
            for a in anchors
        ]
        loss = structural_loss_t(xr, yr, structures, cfg)
        tape.backward(loss, params)
    _apply_grads(model)
    model.step_counter += 1
    mean_w = float(np.mean([s.true_count for s in structures]))
    return loss.item(), mean_w


def category_centroids(latents: np.ndarray, category_ids) -> np.ndarray:
    cats = sorted(set(category_ids))
    ids = np.asarray(category_ids)
    return np.vstack([latents[ids == c].mean(axis=0) for c in cats])


def _centroid_structures(model: AlignmentModel, x_set, y_set) -> tuple[np.ndarray, np.ndarray]:
    xl = encode(model.signal_encoder, model.scoped("sig"), x_set.matrix).data
    yl = encode(model.image_encoder, model.scoped("img"), y_set.matrix).data
    cx = ot.self_similarity(category_centroids(xl, x_set.category_ids))
    cy = ot.self_similarity(category_centroids(yl, y_set.category_ids))
    return cx, cy


def domain_gw_distance(model: AlignmentModel, x_set, y_set) -> float:
    """GW distance between category-centroid structures of the two domains."""
    cx, cy = _centroid_structures(model, x_set, y_set)
    return ot.entropic_gw(cx, cy, epsilon=model.cfg.gw_epsilon).value


def train_epoch(model: AlignmentModel, x_data, y_data, cfg: AlignmentConfig) -> EpochMetrics:
    """One pass over the paired data; returns epoch means and train GW.

    Alternation: with cfg.alternation == "batch", every batch runs step A
    (assignment) then step B (structural); with "epoch", even epochs run
    only A and odd epochs only B.
    """
    cfg.validate()
    if x_data.matrix.shape[0] != y_data.matrix.shape[0]:
        raise EngineError("x and y data must be instance-paired")
    if x_data.matrix.shape[0] == 0:
        raise EngineError("empty data")
    batches = _batches(x_data.matrix.shape[0], cfg)
    do_a = cfg.alternation == "batch" or model.epoch_counter % 2 == 0
    do_b = cfg.alternation == "batch" or model.epoch_counter % 2 == 1

    lw_values, lgw_values, tc_values = [], [], []
    for bi, idx in enumerate(batches):
        xb, yb = x_data.matrix[idx], y_data.matrix[idx]
        if do_a:
            lw_values.append(_step_assignment(model, xb, yb))
        if do_b:
            lgw, mean_w = _step_structural(model, xb, yb, bi)
            lgw_values.append(lgw)
            tc_values.append(mean_w)
    model.epoch_counter += 1
    return EpochMetrics(
        epoch=model.epoch_counter,
        loss_w=float(np.mean(lw_values)) if lw_values else float("nan"),
        loss_gw=float(np.mean(lgw_values)) if lgw_values else float("nan"),
        gw_train=domain_gw_distance(model, x_data, y_data),
        mean_true_count=float(np.mean(tc_values)) if tc_values else float("nan"),
        seed=cfg.seed,
    )


def track_alignment(
    model: AlignmentModel,
    train_sets,
    heldout_sets,
    series: list[TrackPoint] | None = None,
) -> list[TrackPoint]:
    """Append the current train/held-out GW measurement to the series."""
    series = [] if series is None else series
    point = TrackPoint(
        step=model.step_counter,
        gw_train=domain_gw_distance(model, *train_sets),
        gw_heldout=domain_gw_distance(model, *heldout_sets),
    )
    series.append(point)
    return series


# -------------------------------------------------------------- checkpoints


def save_model(model: AlignmentModel, path) -> None:
    meta = {
        "signal_encoder": asdict(model.signal_encoder),
        "image_encoder": asdict(model.image_encoder),
        "refiner": asdict(model.refiner),
        "cfg": asdict(model.cfg),
        "step_counter": model.step_counter,
        "epoch_counter": model.epoch_counter,
    }
    arrays = {k: p.data for k, p in model.params.items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_model(path) -> AlignmentModel:
    with np.load(path) as bundle:
        meta = json.loads(bytes(bundle["__meta__"]).decode())
        arrays = {k: bundle[k] for k in bundle.files if k != "__meta__"}
    cfg = AlignmentConfig(**meta["cfg"])
    model = init_model(meta["signal_encoder"]["input_dim"], meta["image_encoder"]["input_dim"], cfg)
    if set(arrays) != set(model.params):
        raise EngineError("checkpoint parameters do not match the configured model")
    for k, v in arrays.items():
        model.params[k].data = v.astype(np.float64)
    model.step_counter = int(meta["step_counter"])
    model.epoch_counter = int(meta["epoch_counter"])
    return model
