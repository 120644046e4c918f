"""Training loop: batched triple encoding, joint loss, manual backprop, AdamW.

Each step encodes a batch of (query, page, descriptor) triples, builds the
in-batch MaxSim score grid, evaluates the enabled losses, routes their
gradients back through the argmax structure into the encoder, and applies a
decoupled-weight-decay update with linear warmup. Dev nDCG@5 is evaluated per
epoch for early stopping.

The same forward/backward step code powers grad_check_encoder, which verifies
the entire analytic gradient chain against central finite differences.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import Corpus
from .encoder import Encoder, EncoderConfig, init_params, param_spec, zero_grads
from .errors import ConfigurationError, TrainingDivergedError
from .losses import (
    DEFAULT_TAU,
    LossValue,
    global_infonce,
    joint_loss,
    local_align,
    retrieval_infonce,
    scale_loss,
)
from .metrics import ndcg_at_k
from .scoring import Ranking


@dataclass
class TrainerConfig:
    """Optimization hyperparameters.

    Defaults are the desk-scale profile; `reference_scale()` documents the
    full-scale recipe (batch 128, lr 5e-5) for reference runs.
    """

    batch_size: int = 32
    learning_rate: float = 5e-4
    weight_decay: float = 1e-4
    warmup_steps: int = 100
    epochs: int = 6
    tau: float = DEFAULT_TAU
    retrieval_tau: float | None = None  # defaults to tau
    enable_global: bool = True
    enable_local: bool = True
    enable_retrieval: bool = True
    weight_global: float = 1.0
    weight_local: float = 1.0
    weight_retrieval: float = 1.0
    early_stop_patience: int = 5
    seed: int = 0
    #: "contextualized" aligns patches to descriptor hidden states; "embedding"
    #: aligns to raw embedding-layer rows passed through the projection head.
    local_target: str = "contextualized"
    #: Train with descriptor token rows concatenated to document rows (the
    #: cross-context fine-tuned variant; normally paired with retrieval-only).
    cross_context: bool = False
    eval_k: int = 5

    def __post_init__(self):
        if self.retrieval_tau is None:
            self.retrieval_tau = self.tau
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.learning_rate <= 0 or self.tau <= 0 or self.retrieval_tau <= 0:
            raise ConfigurationError("learning_rate and temperatures must be positive")
        if self.weight_decay < 0 or self.warmup_steps < 0 or self.epochs < 0:
            raise ConfigurationError("weight_decay, warmup_steps, epochs must be non-negative")
        if not (self.enable_global or self.enable_local or self.enable_retrieval):
            raise ConfigurationError("all loss switches off: nothing to optimize")
        if self.local_target not in ("contextualized", "embedding"):
            raise ConfigurationError(f"unknown local_target {self.local_target!r}")

    @classmethod
    def reference_scale(cls, **overrides) -> "TrainerConfig":
        """The full-scale recipe: batch 128, lr 5e-5 (not practical at toy scale)."""
        base = dict(batch_size=128, learning_rate=5e-5)
        base.update(overrides)
        return cls(**base)

    def needs_descriptors(self) -> bool:
        return self.enable_global or self.enable_local or self.cross_context


@dataclass
class TrainingLog:
    """Per-step loss records and per-epoch dev metrics."""

    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    early_stopped_epoch: int | None = None
    best_epoch: int | None = None
    best_dev_ndcg: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    log: TrainingLog
    steps_trained: int


@dataclass
class TrainSample:
    query_id: int
    query_tokens: list[int]
    page_id: int
    page_features: np.ndarray
    descriptor_tokens: list[int] | None = None


class AdamW:
    """Adam with decoupled weight decay, beta=(0.9, 0.999), eps=1e-8."""

    def __init__(self, config: EncoderConfig, weight_decay: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.m = zero_grads(config)
        self.v = zero_grads(config)
        self.t = 0
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self._order = [name for name, _ in param_spec(config)]

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name in self._order:
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
            params[name] -= lr * (update + self.weight_decay * params[name])


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear ramp from 0 to base_lr over warmup_steps (step is 0-based)."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, (step + 1) / warmup_steps)


# ----- one batch, forward and backward -----


@dataclass
class _BatchForward:
    """Everything the backward pass and the grad checker need from one batch."""

    q_out: list[np.ndarray]
    q_cache: list[dict]
    d_out: list[np.ndarray]
    d_cache: list[dict]
    g_out: list[np.ndarray] | None
    g_cache: list[dict] | None
    raw_out: list[np.ndarray] | None
    raw_cache: list[dict] | None
    d_rows: list[np.ndarray]  # document-side MaxSim row stacks (incl. cross-context rows)
    scores: np.ndarray | None
    argmax: list[list[np.ndarray]] | None
    parts: dict[str, LossValue | None]
    value: float
    signature: tuple
    local_values: list[LossValue] | None


def _forward_batch(encoder: Encoder, batch: list[TrainSample], cfg: TrainerConfig) -> _BatchForward:
    b = len(batch)
    q_out, q_cache, d_out, d_cache = [], [], [], []
    for s in batch:
        y, c = encoder.forward_tokens(s.query_tokens, stream="text")
        q_out.append(y)
        q_cache.append(c)
        y, c = encoder.forward_patches(s.page_features)
        d_out.append(y)
        d_cache.append(c)

    g_out = g_cache = raw_out = raw_cache = None
    if cfg.needs_descriptors():
        if any(s.descriptor_tokens is None for s in batch):
            raise ConfigurationError("descriptors required by the enabled losses but missing from batch")
        g_out, g_cache = [], []
        for s in batch:
            y, c = encoder.forward_tokens(s.descriptor_tokens, stream="text")
            g_out.append(y)
            g_cache.append(c)
        if cfg.enable_local and cfg.local_target == "embedding":
            raw_out, raw_cache = [], []
            for s in batch:
                y, c = encoder.forward_tokens_raw(s.descriptor_tokens)
                raw_out.append(y)
                raw_cache.append(c)

    d_rows = []
    for j in range(b):
        if cfg.cross_context:
            d_rows.append(np.vstack([d_out[j], g_out[j][:-1]]))
        else:
            d_rows.append(d_out[j])

    sig_parts = []
    scores = None
    argmax: list[list[np.ndarray]] | None = None
    retrieval_part = None
    if cfg.enable_retrieval:
        scores = np.empty((b, b), dtype=np.float64)
        argmax = []
        for i in range(b):
            row_args = []
            for j in range(b):
                sims = q_out[i] @ d_rows[j].T
                arg = np.argmax(sims, axis=1)
                scores[i, j] = float(np.sum(sims[np.arange(sims.shape[0]), arg]))
                row_args.append(arg)
                sig_parts.append(tuple(arg.tolist()))
            argmax.append(row_args)
        retrieval_part = scale_loss(retrieval_infonce(scores, cfg.retrieval_tau), cfg.weight_retrieval)

    global_part = None
    if cfg.enable_global:
        gv = np.vstack([y[-1] for y in d_out])
        gd = np.vstack([y[-1] for y in g_out])
        global_part = scale_loss(global_infonce(gv, gd, cfg.tau), cfg.weight_global)

    local_part = None
    local_values = None
    if cfg.enable_local:
        targets = raw_out if cfg.local_target == "embedding" else [y[:-1] for y in g_out]
        local_values = []
        acc = 0.0
        for i in range(b):
            lv = scale_loss(local_align(d_out[i][:-1], targets[i]), cfg.weight_local / b)
            local_values.append(lv)
            acc += lv.value
            sig_parts.append(("local", i) + lv.tie_rows)
        local_part = LossValue(value=acc)  # gradients stay per-sample in local_values

    parts = {"global": global_part, "local": local_part, "retrieval": retrieval_part}
    value = joint_loss(global_part, local_part, retrieval_part).value
    return _BatchForward(
        q_out=q_out, q_cache=q_cache, d_out=d_out, d_cache=d_cache,
        g_out=g_out, g_cache=g_cache, raw_out=raw_out, raw_cache=raw_cache,
        d_rows=d_rows, scores=scores, argmax=argmax, parts=parts,
        value=value, signature=tuple(sig_parts), local_values=local_values,
    )


def _backward_batch(
    encoder: Encoder,
    batch: list[TrainSample],
    cfg: TrainerConfig,
    fwd: _BatchForward,
    grads: dict[str, np.ndarray],
) -> None:
    b = len(batch)
    d_q = [np.zeros_like(y) for y in fwd.q_out]
    d_docrows = [np.zeros_like(r) for r in fwd.d_rows]
    d_g = [np.zeros_like(y) for y in fwd.g_out] if fwd.g_out is not None else None
    d_raw = [np.zeros_like(y) for y in fwd.raw_out] if fwd.raw_out is not None else None

    if cfg.enable_retrieval:
        w = fwd.parts["retrieval"].gradients["scores"]
        for i in range(b):
            q_rows = fwd.q_out[i]
            n_q = q_rows.shape[0]
            for j in range(b):
                wij = w[i, j]
                if wij == 0.0:
                    continue
                arg = fwd.argmax[i][j]
                d_q[i] += wij * fwd.d_rows[j][arg]
                np.add.at(d_docrows[j], arg, wij * q_rows)

    if cfg.enable_global:
        gpart = fwd.parts["global"]
        for i in range(b):
            lp = fwd.d_out[i].shape[0] - 1
            d_docrows[i][lp] += gpart.gradients["visual_globals"][i]
            d_g[i][-1] += gpart.gradients["descriptor_globals"][i]

    if cfg.enable_local:
        for i, lv in enumerate(fwd.local_values):
            lp = fwd.d_out[i].shape[0] - 1
            d_docrows[i][:lp] += lv.gradients["patches"]
            if cfg.local_target == "embedding":
                d_raw[i] += lv.gradients["descriptor_tokens"]
            else:
                d_g[i][:-1] += lv.gradients["descriptor_tokens"]

    # Fixed ascending sample order for bit-reproducible accumulation.
    for i in range(b):
        encoder.backward(fwd.q_cache[i], d_q[i], grads)
        n_doc = fwd.d_out[i].shape[0]
        encoder.backward(fwd.d_cache[i], d_docrows[i][:n_doc], grads)
        if d_g is not None:
            dg = d_g[i]
            if cfg.cross_context:
                dg = dg.copy()
                dg[:-1] += d_docrows[i][n_doc:]
            encoder.backward(fwd.g_cache[i], dg, grads)
        if d_raw is not None:
            encoder.backward(fwd.raw_cache[i], d_raw[i], grads)


# ----- the training loop -----


def _make_samples(corpus: Corpus, query_ids: list[int], need_desc: bool) -> list[TrainSample]:
    samples = []
    for qid in query_ids:
        q = corpus.queries[qid]
        page_id = q.relevant_page_ids[0]
        desc = None
        if need_desc:
            if corpus.descriptors is None:
                raise ConfigurationError(
                    "training with descriptor-supervised losses requires descriptors, "
                    "but the corpus was loaded without them"
                )
            desc = corpus.descriptors[page_id].tokens
        samples.append(
            TrainSample(
                query_id=qid,
                query_tokens=q.tokens,
                page_id=page_id,
                page_features=corpus.patch_features(page_id),
                descriptor_tokens=desc,
            )
        )
    return samples


def _dev_ndcg(encoder: Encoder, corpus: Corpus, k: int) -> float:
    """Mean nDCG@k over the dev split (normal scoring, no descriptors)."""
    split = corpus.splits["dev"]
    docs = [encoder.encode_page(corpus.patch_features(pid), pid) for pid in split.page_ids]
    vals = []
    for qid in split.query_ids:
        q = corpus.queries[qid]
        emb = encoder.encode_query(q.tokens, qid)
        from .scoring import rank  # local import keeps module load order simple

        ranking: Ranking = rank(emb, docs, k)
        vals.append(ndcg_at_k(ranking.doc_ids, set(q.relevant_page_ids), k))
    return float(np.mean(vals)) if vals else 0.0


def train(
    corpus: Corpus,
    encoder_config: EncoderConfig,
    trainer_config: TrainerConfig,
    initial_params: dict[str, np.ndarray] | None = None,
    start_step: int = 0,
) -> TrainResult:
    """Train the encoder on the corpus train split; early-stop on dev nDCG@5.

    Returns the parameters of the best dev epoch (or the initial parameters if
    epochs == 0). Fully deterministic given configs and seeds.
    """
    if "train" not in corpus.splits or "dev" not in corpus.splits:
        raise ConfigurationError("corpus must provide train and dev splits")
    params = (
        {k: v.copy() for k, v in initial_params.items()}
        if initial_params is not None
        else init_params(encoder_config)
    )
    encoder = Encoder(encoder_config, params)
    optimizer = AdamW(encoder_config, trainer_config.weight_decay)
    rng = np.random.default_rng(trainer_config.seed)
    log = TrainingLog()

    train_qids = list(corpus.splits["train"].query_ids)
    if not train_qids:
        raise ConfigurationError("train split has no queries")
    samples = _make_samples(corpus, train_qids, trainer_config.needs_descriptors())

    best_ndcg = -np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    best_epoch = None
    stale = 0
    step = start_step

    for epoch in range(trainer_config.epochs):
        order = rng.permutation(len(samples))
        for lo in range(0, len(samples), trainer_config.batch_size):
            batch = [samples[i] for i in order[lo : lo + trainer_config.batch_size]]
            if len(batch) < 2:
                continue  # a singleton batch has no in-batch negatives
            fwd = _forward_batch(encoder, batch, trainer_config)
            if not np.isfinite(fwd.value):
                diag = {
                    "step": step,
                    "epoch": epoch,
                    "loss_components": {
                        k: (None if v is None else v.value) for k, v in fwd.parts.items()
                    },
                    "max_abs_param": max(float(np.max(np.abs(v))) for v in params.values()),
                    "batch_query_ids": [s.query_id for s in batch],
                }
                err = TrainingDivergedError(f"non-finite loss at step {step}", diagnostics=diag)
                err.partial_log = log  # cmd_train persists the steps recorded so far
                raise err
            grads = zero_grads(encoder_config)
            _backward_batch(encoder, batch, trainer_config, fwd, grads)
            lr = warmup_lr(trainer_config.learning_rate, step, trainer_config.warmup_steps)
            optimizer.step(params, grads, lr)
            log.steps.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "lr": lr,
                    "loss": fwd.value,
                    "loss_global": None if fwd.parts["global"] is None else fwd.parts["global"].value,
                    "loss_local": None if fwd.parts["local"] is None else fwd.parts["local"].value,
                    "loss_retrieval": None
                    if fwd.parts["retrieval"] is None
                    else fwd.parts["retrieval"].value,
                }
            )
            step += 1

        dev = _dev_ndcg(encoder, corpus, trainer_config.eval_k)
        improved = dev > best_ndcg + 1e-12
        log.epochs.append({"epoch": epoch, "dev_ndcg": dev, "improved": improved})
        if improved:
            best_ndcg = dev
            best_params = {k: v.copy() for k, v in params.items()}
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if trainer_config.early_stop_patience and stale >= trainer_config.early_stop_patience:
                log.early_stopped_epoch = epoch
                break

    log.best_epoch = best_epoch
    log.best_dev_ndcg = None if best_epoch is None else float(best_ndcg)
    return TrainResult(params=best_params, log=log, steps_trained=step)


# ----- end-to-end gradient verification -----


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    n_excluded: int
    tolerance: float
    passed: bool
    worst: tuple[str, tuple, float, float] | None = None


def _tiny_config(seed: int) -> EncoderConfig:
    return EncoderConfig(
        model_dim=12,
        retrieval_dim=6,
        layers=1,
        heads=2,
        vocab_size=40,
        max_seq=12,
        patch_feature_dim=9,
        ff_dim=24,
        seed=seed,
    )


def _tiny_batch(rng: np.random.Generator, config: EncoderConfig, b: int = 2) -> list[TrainSample]:
    samples = []
    for i in range(b):
        q_len = int(rng.integers(2, 5))
        d_len = int(rng.integers(3, 7))
        g_len = int(rng.integers(2, 6))
        samples.append(
            TrainSample(
                query_id=i,
                query_tokens=rng.integers(0, config.vocab_size, size=q_len).tolist(),
                page_id=i,
                page_features=rng.normal(0.0, 1.0, size=(d_len, config.patch_feature_dim)),
                descriptor_tokens=rng.integers(0, config.vocab_size, size=g_len).tolist(),
            )
        )
    return samples


def grad_check_encoder(
    seed: int = 0,
    epsilon: float = 1e-5,
    n_coords: int = 200,
    tolerance: float = 1e-3,
    trainer_config: TrainerConfig | None = None,
    batch: list[TrainSample] | None = None,
) -> GradCheckReport:
    """Verify the full analytic gradient chain on a tiny random batch.

    Compares backprop against central differences for a random subset of at
    least `n_coords` parameter coordinates. A coordinate is excluded (and
    counted) when the two perturbed evaluations disagree on any argmax
    structure: the loss is only subdifferentiable across such a boundary.
    A hand-built `batch` (sized for the tiny config) can replace the random
    one, e.g. to place the check at an engineered argmax tie.
    """
    if not (1e-6 <= epsilon <= 1e-3):
        raise ValueError(f"grad_check_encoder: epsilon {epsilon} outside [1e-6, 1e-3]")
    config = _tiny_config(seed)
    tcfg = trainer_config or TrainerConfig(tau=0.5, retrieval_tau=0.5, seed=seed)
    rng = np.random.default_rng(seed)
    if batch is None:
        batch = _tiny_batch(rng, config)

    params = init_params(config)
    encoder = Encoder(config, params)
    fwd = _forward_batch(encoder, batch, tcfg)
    grads = zero_grads(config)
    _backward_batch(encoder, batch, tcfg, fwd, grads)

    coords: list[tuple[str, tuple]] = []
    for name, shape in param_spec(config):
        for idx in np.ndindex(shape):
            coords.append((name, idx))
    take = min(n_coords, len(coords))
    chosen = rng.choice(len(coords), size=take, replace=False)

    def value_and_sig(p: dict[str, np.ndarray]) -> tuple[float, tuple]:
        f = _forward_batch(Encoder(config, p), batch, tcfg)
        return f.value, f.signature

    max_rel = 0.0
    worst = None
    n_checked = 0
    n_excluded = 0
    work = copy.deepcopy(params)
    for ci in chosen:
        name, idx = coords[int(ci)]
        orig = work[name][idx]
        work[name][idx] = orig + epsilon
        f_plus, sig_plus = value_and_sig(work)
        work[name][idx] = orig - epsilon
        f_minus, sig_minus = value_and_sig(work)
        work[name][idx] = orig
        if sig_plus != sig_minus:
            n_excluded += 1
            continue
        numeric = (f_plus - f_minus) / (2 * epsilon)
        analytic = float(grads[name][idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        n_checked += 1
        if rel > max_rel:
            max_rel = rel
            worst = (name, idx, analytic, numeric)
    return GradCheckReport(
        max_rel_error=max_rel,
        n_checked=n_checked,
        n_excluded=n_excluded,
        tolerance=tolerance,
        passed=max_rel < tolerance,
        worst=worst,
    )
