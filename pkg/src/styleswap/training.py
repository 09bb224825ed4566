"""AdamW plus the three-stage training pipeline with exact freeze policies.

Stage 1 trains one AdapterSet per style (and the style-less s0 set) on
(perturbed, original) sentence pairs while every base parameter is frozen.
Stage 2 fine-tunes a parameter group of the base (default: encoder plus
the tied embedding) on a task corpus with the frozen s0 adapters installed.
Stage 3 is pure inference and lives in decoding.

Freezing is enforced structurally: only the stage's trainable tensors have
requires_grad set, so frozen parameters never receive gradients and are
byte-identical afterwards. Batch order is fixed by the stage seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import Vocab, child_seed, read_corpus
from .model import (AdapterError, Model, decode_logits_batch, encode_batch,
                    fresh_adapters, pad_attention_mask, param_group, swap_adapters)


class AdamW:
    """Decoupled-weight-decay Adam with bias correction.

    Moment buffers exist only for the named parameters handed in, i.e. the
    stage's trainable set.
    """

    def __init__(self, named_params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = beta1, beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.moments = {
            name: (np.zeros_like(t.data), np.zeros_like(t.data))
            for name, t in self.named_params
        }

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, t in self.named_params:
            if t.grad is None:
                raise ValueError(f"adamw: trainable parameter {name!r} has no gradient")
            g = t.grad
            m, v = self.moments[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if self.weight_decay:
                t.data *= 1.0 - self.lr * self.weight_decay
            t.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for _, t in self.named_params:
            t.grad = None


@dataclass(frozen=True)
class Hyper:
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 5
    patience: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    log_path: Path | None = None


@dataclass
class StageResult:
    losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    epochs_run: int = 0


# ---------------------------------------------------------------------------
# batching


def _pad_block(seqs: list[list[int]], pad_id: int) -> np.ndarray:
    width = max(len(s) for s in seqs)
    block = np.full((len(seqs), width), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        block[i, : len(s)] = s
    return block


def make_batches(pairs, vocab: Vocab, batch_size: int, rng: np.random.Generator | None):
    """Yield (src, dec_in, dec_tgt) int blocks; rng=None keeps corpus order."""
    order = np.arange(len(pairs))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [pairs[i] for i in order[start : start + batch_size]]
        src = _pad_block([x for x, _ in chunk], vocab.pad)
        dec_in = _pad_block([[vocab.bos] + y for _, y in chunk], vocab.pad)
        dec_tgt = _pad_block([y + [vocab.eos] for _, y in chunk], vocab.pad)
        yield src, dec_in, dec_tgt


def batch_loss(model: Model, vocab: Vocab, src: np.ndarray, dec_in: np.ndarray,
               dec_tgt: np.ndarray) -> Tensor:
    src_mask = pad_attention_mask(src, vocab.pad)
    enc = encode_batch(model, src, src_mask)
    logits = decode_logits_batch(model, enc, src_mask, dec_in)
    bsz, t, v = logits.shape
    return ag.cross_entropy(ag.reshape(logits, (bsz * t, v)), dec_tgt.ravel(),
                            ignore_id=vocab.pad)


def mean_loss(model: Model, vocab: Vocab, pairs, batch_size: int) -> float:
    total = count = 0.0
    with ag.no_grad():
        for src, dec_in, dec_tgt in make_batches(pairs, vocab, batch_size, rng=None):
            n = int((dec_tgt != vocab.pad).sum())
            total += batch_loss(model, vocab, src, dec_in, dec_tgt).item() * n
            count += n
    return total / count


# ---------------------------------------------------------------------------
# stage driver


def set_trainable(model: Model, trainable) -> list[tuple[str, Tensor]]:
    """Freeze everything, then mark exactly `trainable`; returns the live set."""
    trainable = list(trainable)
    for _, t in model.named_parameters():
        t.requires_grad = False
        t.grad = None
    for _, t in trainable:
        t.requires_grad = True
    return trainable


def train_on_pairs(model: Model, vocab: Vocab, trainable, splits: "PairSplits",
                   hp: Hyper) -> StageResult:
    """Epoch loop with per-epoch validation and patience-based early stop."""
    live = set_trainable(model, trainable)
    opt = AdamW(live, lr=hp.lr, beta1=hp.beta1, beta2=hp.beta2,
                eps=hp.adam_eps, weight_decay=hp.weight_decay)
    rng = np.random.default_rng(child_seed(hp.seed, "batch-order"))
    result = StageResult()
    log = open(hp.log_path, "w", encoding="utf-8") if hp.log_path else None
    best_val = np.inf
    stale = 0
    step = 0
    try:
        for epoch in range(hp.epochs):
            for src, dec_in, dec_tgt in make_batches(splits.train, vocab,
                                                     hp.batch_size, rng):
                loss = batch_loss(model, vocab, src, dec_in, dec_tgt)
                opt.zero_grad()
                ag.backward(loss)
                opt.step()
                step += 1
                result.losses.append(loss.item())
                if log:
                    log.write(json.dumps({"step": step, "loss": loss.item(),
                                          "lr": hp.lr}) + "\n")
            result.epochs_run = epoch + 1
            if splits.valid:
                val = mean_loss(model, vocab, splits.valid, hp.batch_size)
                result.val_losses.append(val)
                if log:
                    log.write(json.dumps({"step": step, "val_loss": val,
                                          "lr": hp.lr}) + "\n")
                if val < best_val - 1e-6:
                    best_val = val
                    stale = 0
                else:
                    stale += 1
                    if stale >= hp.patience:
                        break
    finally:
        if log:
            log.close()
    return result


# ---------------------------------------------------------------------------
# pair loading (corpus files -> training splits)


@dataclass
class PairSplits:
    train: list[tuple[list[int], list[int]]]
    valid: list[tuple[list[int], list[int]]]
    test: list[tuple[list[int], list[int]]] = field(default_factory=list)


def _usable(pair, max_len: int) -> bool:
    x, y = pair
    return 0 < len(x) <= max_len and 0 < len(y) + 1 <= max_len


def load_style_pairs(data_dir: Path, style_id: str, mode: str, vocab: Vocab,
                     max_len: int) -> PairSplits:
    """(perturbed, original) pairs for one style; mode picks g_p or g_n inputs."""
    tag = {"inverse-para": "para", "denoise": "noise"}.get(mode)
    if tag is None:
        raise ValueError(f"unknown pretraining mode: {mode!r}")
    data_dir = Path(data_dir)
    out = {}
    for split in ("train", "valid", "test"):
        targets = read_corpus(data_dir / f"style_{style_id}.{split}.txt", vocab)
        inputs = read_corpus(data_dir / f"style_{style_id}.{tag}.{split}.src", vocab)
        pairs = [p for p in zip(inputs, targets) if _usable(p, max_len)]
        out[split] = pairs
    return PairSplits(out["train"], out["valid"], out["test"])


def load_task_pairs(data_dir: Path, task_kind: str, vocab: Vocab,
                    max_len: int) -> PairSplits:
    data_dir = Path(data_dir)
    out = {}
    for split in ("train", "valid", "test"):
        srcs = read_corpus(data_dir / f"task_{task_kind}.{split}.src", vocab)
        tgts = read_corpus(data_dir / f"task_{task_kind}.{split}.tgt", vocab)
        pairs = [p for p in zip(srcs, tgts) if _usable(p, max_len)]
        out[split] = pairs
    return PairSplits(out["train"], out["valid"], out["test"])


# ---------------------------------------------------------------------------
# the three stages


def train_style_adapter(model: Model, vocab: Vocab, style_id: str, mode: str,
                        splits: PairSplits, hp: Hyper):
    """Stage 1: fit a fresh AdapterSet on (g(t), t) pairs; base fully frozen."""
    adapters = fresh_adapters(model.config, style_id,
                              seed=child_seed(hp.seed, f"adapter:{style_id}"), mode=mode)
    swap_adapters(model, adapters)
    result = train_on_pairs(model, vocab, param_group(model, "adapter"), splits, hp)
    return adapters, result


def train_stylefree_adapter(model: Model, vocab: Vocab, splits: PairSplits, hp: Hyper):
    """Stage 1 for s0: identical recipe on the undecorated corpus."""
    return train_style_adapter(model, vocab, "s0", "inverse-para", splits, hp)


def train_task(model: Model, vocab: Vocab, adapters, splits: PairSplits,
               task_kind: str, trainable: str, hp: Hyper) -> StageResult:
    """Stage 2: fit the selected base group with the s0 adapters frozen in."""
    if adapters is None:
        raise AdapterError("task fine-tuning requires the style-less adapters")
    swap_adapters(model, adapters)
    return train_on_pairs(model, vocab, param_group(model, trainable), splits, hp)


def run_pipeline(model: Model, vocab: Vocab, data_dir: Path, hp: Hyper, *,
                 styles=("s1", "s2", "s3"), tasks=("headline", "story"),
                 mode: str = "inverse-para", trainable: str = "enc",
                 log_dir: Path | None = None):
    """Stage 1 for s0 + all styles on one base, then stage 2 once per task.

    Returns (adapters, task_models): the trained AdapterSets keyed by style,
    and one fine-tuned copy of the base per task. Adapter training happens
    once and its artifacts are shared by every task.
    """
    from .store import clone_model  # local import; store depends on model only

    max_len = model.config.max_len

    def stage_hp(label: str, epochs: int | None = None) -> Hyper:
        path = (Path(log_dir) / f"{label}.jsonl") if log_dir else None
        return replace(hp, seed=child_seed(hp.seed, label), log_path=path,
                       **({"epochs": epochs} if epochs else {}))

    adapters = {}
    results = {}
    for style_id in ("s0",) + tuple(styles):
        style_mode = "inverse-para" if style_id == "s0" else mode
        splits = load_style_pairs(data_dir, style_id, style_mode, vocab, max_len)
        adapters[style_id], results[f"step1.{style_id}"] = train_style_adapter(
            model, vocab, style_id, style_mode, splits, stage_hp(f"step1.{style_id}"))

    task_models = {}
    for task in tasks:
        task_model = clone_model(model)
        splits = load_task_pairs(data_dir, task, vocab, max_len)
        results[f"step2.{task}"] = train_task(task_model, vocab, adapters["s0"],
                                              splits, task, trainable,
                                              stage_hp(f"step2.{task}"))
        task_models[task] = task_model
    return adapters, task_models, results
