"""Epoch loop, early stopping and the ablation suite."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .evaluator import MetricsReport, evaluate, evaluate_embeddings
from .objectives import DEFAULT_LAMBDA2, LossBreakdown, LossConfig, compute_gradients
from .params import AdamState, NonFiniteGradientError, adam_step, init_params_for, save_checkpoint
from .propagation import ModelConfig, forward
from .sampling import augment_edges, sample_bpr_batch

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Non-finite loss or gradient; ``params``/``state`` hold the last good values."""

    def __init__(self, epoch, params, state, history):
        super().__init__(f"training diverged in epoch {epoch}")
        self.epoch = epoch
        self.params = params
        self.state = state
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 64
    batch_size: int = 2048
    layers: int = 3
    lr: float = 1e-3
    lambda1: float = 0.1
    lambda2: float = DEFAULT_LAMBDA2
    tau: float = 0.2
    epochs_max: int = 100
    patience: int = 10
    eval_interval: int = 1
    augment: bool = True
    keep_ig: float = 0.9
    keep_kg: float = 0.9
    use_cl: bool = True
    use_fusion: bool = True
    normalize: bool = True
    fuse_at: str = "layer"
    include_ego: bool = False
    seed: int = 0
    float_width: int = 32
    K: int = 20
    batches_per_epoch: int = 0  # 0: ceil(train edges / batch_size)
    workers: int = 1
    cl_negatives: bool = True

    def validate(self):
        if self.dim < 1 or self.batch_size < 1 or self.layers < 1:
            raise ValueError("dim, batch_size and layers must be >= 1")
        if self.lr <= 0 or self.tau <= 0:
            raise ValueError("lr and tau must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if not (0 < self.keep_ig <= 1 and 0 < self.keep_kg <= 1):
            raise ValueError("keep rates must lie in (0, 1]")
        if self.patience < 1 or self.eval_interval < 1 or self.epochs_max < 0:
            raise ValueError("patience and eval_interval must be >= 1, epochs_max >= 0")
        if self.float_width not in (32, 64):
            raise ValueError("float_width must be 32 or 64")
        if self.workers < 1 or self.K < 1 or self.batches_per_epoch < 0:
            raise ValueError("workers and K must be >= 1")
        self.model_config().validate()

    @property
    def dtype(self):
        return np.float32 if self.float_width == 32 else np.float64

    def model_config(self):
        return ModelConfig(self.layers, self.use_fusion, self.fuse_at, self.normalize, self.include_ego)

    def loss_config(self):
        return LossConfig(self.lambda1, self.lambda2, self.tau, self.use_cl,
                          reg_entities=self.use_cl or self.use_fusion, cl_negatives=self.cl_negatives)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    valid: MetricsReport | None
    seconds: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    best_recall: float = -math.inf

    def __len__(self):
        return len(self.records)

    def rows(self, with_time=True):
        out = []
        for r in self.records:
            row = {
                "epoch": r.epoch,
                "bpr": r.losses.bpr,
                "cl": r.losses.cl,
                "reg": r.losses.reg,
                "total": r.losses.total,
                "val_recall@20": r.valid.recall if r.valid else float("nan"),
                "val_ndcg@20": r.valid.ndcg if r.valid else float("nan"),
            }
            if with_time:
                row["seconds"] = r.seconds
            out.append(row)
        return out

    def to_csv(self, path):
        cols = ["epoch", "bpr", "cl", "reg", "total", "val_recall@20", "val_ndcg@20", "seconds"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in self.rows():
                writer.writerow([row[c] if c == "epoch" else repr(float(row[c])) for c in cols])


def _mean_breakdown(parts, cfg):
    n = len(parts)
    fields = ("bpr", "cl_user", "cl_item", "reg", "total")
    vals = {f: sum(getattr(p, f) for p in parts) / n for f in fields}
    return LossBreakdown(**vals, lambda1=parts[0].lambda1, lambda2=cfg.lambda2, tau=cfg.tau)


def train(config, bundle, checkpoint_path=None, callback=None, manifest=None):
    """Train on ``bundle``; returns ``(best params, history)``.

    Randomness comes from three streams spawned from ``config.seed``:
    initialization, BPR sampling and augmentation. ``manifest`` (key/value
    pairs) is embedded in the checkpoint when ``checkpoint_path`` is given.
    """
    config.validate()
    mcfg, lcfg = config.model_config(), config.loss_config()
    s_init, s_sample, s_aug = np.random.SeedSequence(config.seed).spawn(3)
    params = init_params_for(bundle, config.dim, seed=s_init, dtype=config.dtype)
    state = AdamState.zeros_like(params, lr=config.lr)
    rng_sample = np.random.default_rng(s_sample)
    rng_aug = np.random.default_rng(s_aug)
    history = TrainHistory()
    best = params.copy()
    train_g, kg = bundle.train, bundle.kg
    n_batches = config.batches_per_epoch or max(1, math.ceil(train_g.num_edges / config.batch_size))
    stale = 0

    for epoch in range(config.epochs_max):
        t0 = time.perf_counter()
        if config.augment:
            ig_used = augment_edges(train_g, config.keep_ig, rng_aug)
            kg_used = augment_edges(kg, config.keep_kg, rng_aug)
        else:
            ig_used, kg_used = train_g, kg
        parts = []
        for _ in range(n_batches):
            batch = sample_bpr_batch(train_g, config.batch_size, rng_sample)
            fwd = forward(params, ig_used, kg_used, mcfg)
            losses, grads = compute_gradients(fwd, batch, lcfg)
            if not math.isfinite(losses.total):
                _diverged(epoch, params, state, history, checkpoint_path)
            try:
                # adam_step validates every table before writing, so a failure leaves params intact
                adam_step(params, grads, state)
            except NonFiniteGradientError:
                _diverged(epoch, params, state, history, checkpoint_path)
            parts.append(losses)
        valid = None
        if (epoch + 1) % config.eval_interval == 0:
            valid = evaluate(params, bundle, "valid", config.K, mcfg, config.workers)
            if valid.recall > history.best_recall:
                history.best_recall = valid.recall
                history.best_epoch = epoch
                best = params.copy()
                stale = 0
            else:
                stale += 1
        rec = EpochRecord(epoch, _mean_breakdown(parts, config), valid, time.perf_counter() - t0)
        history.records.append(rec)
        log.debug("epoch %d total=%.5f val_recall=%s", epoch, rec.losses.total,
                  None if valid is None else round(valid.recall, 5))
        if callback is not None:
            callback(rec)
        if stale >= config.patience:
            break
    if history.best_epoch < 0:
        best = params
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, best, state, manifest)
    return best, history


def _diverged(epoch, params, state, history, checkpoint_path):
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, state, {"diverged_epoch": epoch})
    raise TrainingDiverged(epoch, params, state, history)


ABLATIONS = {
    "full": {},
    "w/o CL": {"use_cl": False},
    "w/o LF": {"use_fusion": False},
    "w/o augmentation": {"augment": False},
    "w/o normalization": {"normalize": False},
    "LightGCN-only": {"use_cl": False, "use_fusion": False, "augment": False},
}


def run_ablation_suite(config, bundle, seeds=None, variants=None, trainer=train):
    """Train every variant for every seed; rows hold seed-averaged metrics.

    Each row carries ``variant``, ``valid_recall@K``, ``valid_ndcg@K``,
    ``test_recall@K``, ``test_ndcg@K`` and the per-seed test recalls.
    """
    seeds = [config.seed] if seeds is None else list(seeds)
    names = list(ABLATIONS) if variants is None else list(variants)
    K = config.K
    rows = []
    for name in names:
        per_seed = []
        for seed in seeds:
            cfg = config.replace(seed=seed, **ABLATIONS[name])
            params, _ = trainer(cfg, bundle)
            fwd = forward(params, bundle.train, bundle.kg, cfg.model_config())
            v = evaluate_embeddings(fwd.x_user, fwd.x_item, bundle.train, bundle.valid, K, "valid", cfg.workers)
            t = evaluate_embeddings(fwd.x_user, fwd.x_item, bundle.train, bundle.test, K, "test", cfg.workers)
            per_seed.append((v, t))
        rows.append({
            "variant": name,
            f"valid_recall@{K}": float(np.mean([v.recall for v, _ in per_seed])),
            f"valid_ndcg@{K}": float(np.mean([v.ndcg for v, _ in per_seed])),
            f"test_recall@{K}": float(np.mean([t.recall for _, t in per_seed])),
            f"test_ndcg@{K}": float(np.mean([t.ndcg for _, t in per_seed])),
            "seed_test_recalls": [t.recall for _, t in per_seed],
        })
    return rows


def write_ablation_csv(path, rows, K=20):
    cols = ["variant", f"valid_recall@{K}", f"valid_ndcg@{K}", f"test_recall@{K}", f"test_ndcg@{K}"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([row[c] if c == "variant" else repr(row[c]) for c in cols])


def format_ablation(rows, K=20):
    head = f"{'variant':<20}{'val R@' + str(K):>10}{'val N@' + str(K):>10}{'test R@' + str(K):>10}{'test N@' + str(K):>10}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['variant']:<20}{r[f'valid_recall@{K}']:>10.4f}{r[f'valid_ndcg@{K}']:>10.4f}"
                     f"{r[f'test_recall@{K}']:>10.4f}{r[f'test_ndcg@{K}']:>10.4f}")
    return "\n".join(lines)
