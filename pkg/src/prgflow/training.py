"""Training loops for the cascaded conv regressor.

Supervised training uses per-block residual labels: each block is
trained to predict matrix_to_params(compose(invert(h_acc), truth)) in
its own model from the re-warped frame stack, and the cascade state is
advanced with the block's own prediction.  Gradients do not flow through
the inter-block warps.  Unsupervised training instead differentiates the
photometric loss through the sampler per block.  All loops are
deterministic in the seed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .bench import WarpRange, gen_pair
from .errors import ConfigError
from .estimators import CascadeConfig
from .image import ImagePlane, sample_bilinear, to_gray
from .losses import LossSpec, loss_supervised, loss_unsupervised
from .network import (
    AdamState,
    ModelWeights,
    PRESETS,
    adam_step,
    block_backward,
    block_forward,
    count_params_flops,
    init_weights,
)
from .warps import (
    PixelWarp,
    WarpModel,
    WarpParams,
    compose,
    invert,
    matrix_to_params,
    params_to_pixel_warp,
)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch: int = 32
    epochs: int = 20
    patience: int = 5
    gamma: WarpRange = field(default_factory=lambda: WarpRange.preset("gamma1"))
    loss: LossSpec | str = "supervised"
    seed: int = 0
    val_fraction: float = 0.1
    pairs_per_image: int = 1  # pairs synthesized per train image per epoch

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def _pair_seed(seed: int, epoch: int, idx: int) -> int:
    return int(np.random.SeedSequence([seed, epoch + 1, idx + 1]).generate_state(1)[0])


def _gray_pair(p1: ImagePlane, p2: ImagePlane):
    return to_gray(p1), to_gray(p2)


def _forward_sample(weights: ModelWeights, p1: ImagePlane, p2: ImagePlane,
                    truth: WarpParams | None, need_cache: bool):
    """Run the cascade on one pair, collecting per-block training context.

    Returns (final PS params, per-block list of (stack, cache, pred,
    label, acc_matrix)).  truth=None skips labels (unsupervised).
    """
    g1, g2 = _gray_pair(p1, p2)
    target = WarpModel.PSEUDO_SIMILARITY
    if any(m is WarpModel.SIMILARITY for m in weights.cascade.blocks):
        target = WarpModel.SIMILARITY
    h_acc = WarpParams.identity(target)
    blocks_ctx = []
    for i, model in enumerate(weights.cascade.blocks):
        acc = params_to_pixel_warp(h_acc, g1.width, g1.height)
        q1 = sample_bilinear(g1, acc)
        stack = np.concatenate([q1.data, g2.data], axis=2)
        out = block_forward(weights.blocks[i], stack, need_cache=need_cache)
        vec, cache = out if need_cache else (out, None)
        try:
            pred = WarpParams.from_vector(vec, model)
        except Exception:
            pred = WarpParams.identity(model)
        label = None
        if truth is not None:
            residual = compose(invert(h_acc), truth.lift(target))
            label = matrix_to_params(
                params_to_pixel_warp(residual, g1.width, g1.height), model)
        blocks_ctx.append((stack, cache, pred, label, acc.m))
        h_acc = compose(h_acc, pred.lift(target))
    return h_acc, blocks_ctx


def _sample_losses_and_grads(weights, p1, p2, truth, loss):
    """Per-sample loss value and per-block upstream gradients dL/dh."""
    supervised = isinstance(loss, str)
    h_final, ctx = _forward_sample(weights, p1, p2,
                                   truth if supervised else None, need_cache=True)
    value = 0.0
    ups = []
    g1, g2 = _gray_pair(p1, p2)
    for stack, cache, pred, label, acc in ctx:
        if supervised:
            v, g = loss_supervised(pred, label)
            ups.append((cache, g[0]))
        else:
            v, g = loss_unsupervised(g1, g2, pred, loss, pre=acc)
            ups.append((cache, g))
        value += v
    return value / len(ctx), ups, h_final


def _batch_update(weights, batch, loss, states, t, lr):
    """Accumulate gradients over a batch (fixed order) and ADAM-update."""
    nblocks = len(weights.blocks)
    grad_acc = [None] * nblocks
    total = 0.0
    for p1, p2, truth in batch:
        value, ups, _ = _sample_losses_and_grads(weights, p1, p2, truth, loss)
        total += value
        for bi, (cache, up) in enumerate(ups):
            grads = block_backward(weights.blocks[bi], cache, np.asarray(up))
            if grad_acc[bi] is None:
                grad_acc[bi] = grads
            else:
                grad_acc[bi] = [a + g for a, g in zip(grad_acc[bi], grads)]
    nb = len(batch)
    for bi, bw in enumerate(weights.blocks):
        grads = [g / nb for g in grad_acc[bi]]
        arrays, states[bi] = adam_step(bw.arrays(), grads, states[bi], t, lr=lr)
        bw.set_arrays(arrays)
    return total / nb


def _val_loss(weights, val_pairs, loss):
    preds, truths, total = [], [], 0.0
    supervised = isinstance(loss, str)
    for p1, p2, truth in val_pairs:
        h_final, _ = _forward_sample(weights, p1, p2, None, need_cache=False)
        if supervised:
            v, _ = loss_supervised(h_final, truth.lift(h_final.model))
        else:
            g1, g2 = _gray_pair(p1, p2)
            v, _ = loss_unsupervised(g1, g2, h_final, loss)
        total += v
    return total / max(len(val_pairs), 1)


def train(corpus, cfg: TrainConfig, cascade: CascadeConfig,
          widths=PRESETS["small"], weights: ModelWeights | None = None,
          log=None):
    """Train a cascade regressor on synthesized pairs from the corpus.

    Returns (ModelWeights, history) where history is a list of
    (epoch, train_loss, val_loss).  Early-stops (keeping the best
    weights) when validation fails to improve for cfg.patience epochs.
    """
    corpus = list(corpus)
    for img in corpus:
        if img.width < 300 or img.height < 300:
            raise ConfigError("corpus images must be at least 300x300")
    n_val = max(1, int(len(corpus) * cfg.val_fraction))
    if (len(corpus) - n_val) * cfg.pairs_per_image < cfg.batch:
        raise ConfigError(
            f"corpus leaves {len(corpus) - n_val} training images after the "
            f"validation split; need at least batch={cfg.batch} pairs per epoch")
    val_imgs, train_imgs = corpus[:n_val], corpus[n_val:]
    if weights is None:
        weights = init_weights(cascade, widths=widths, seed=cfg.seed)
    states = [AdamState.zeros_like(bw.arrays()) for bw in weights.blocks]
    val_pairs = [
        gen_pair(img, cfg.gamma, _pair_seed(cfg.seed, -1, i))
        for i, img in enumerate(val_imgs)
    ]
    history = []
    best = (float("inf"), None, 0)
    t = 0
    n_train = len(train_imgs) * cfg.pairs_per_image
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(_pair_seed(cfg.seed, epoch, -1)).permutation(n_train)
        epoch_loss = 0.0
        nb = 0
        for start in range(0, n_train - cfg.batch + 1, cfg.batch):
            batch = []
            for j in order[start : start + cfg.batch]:
                img = train_imgs[int(j) % len(train_imgs)]
                batch.append(gen_pair(img, cfg.gamma, _pair_seed(cfg.seed, epoch, int(j))))
            t += 1
            epoch_loss += _batch_update(weights, batch, cfg.loss, states, t, cfg.lr)
            nb += 1
        val = _val_loss(weights, val_pairs, cfg.loss)
        history.append((epoch, epoch_loss / max(nb, 1), val))
        if log:
            log(f"epoch {epoch}: train {epoch_loss / max(nb, 1):.5f} val {val:.5f}")
        if val < best[0]:
            best = (val, [a.copy() for a in weights.arrays()], epoch)
        elif epoch - best[2] >= cfg.patience:
            break
    if best[1] is not None:
        weights.set_arrays(best[1])
    return weights, history


def train_student(teacher: ModelWeights, mode: str, corpus, cfg: TrainConfig,
                  small_cascade: CascadeConfig | None = None,
                  widths=PRESETS["tiny"], log=None):
    """Compression pathways: scratch, projection, or distillation.

    The student shares the teacher's cascade structure by default.  In
    projection and distillation the teacher evaluates the student's
    re-warped stacks so both predict the same residuals; projection
    updates both nets under the joint loss (lambda = 1, 1, 0.1),
    distillation trains the student toward the frozen teacher.
    """
    if mode not in ("scratch", "projection", "distill"):
        raise ConfigError(f"unknown compression mode {mode!r}")
    cascade = small_cascade or teacher.cascade
    if len(cascade.blocks) != len(teacher.cascade.blocks):
        raise ConfigError("student cascade must match the teacher block count")
    student = init_weights(cascade, widths=widths, seed=cfg.seed)
    sp, _ = count_params_flops(student)
    tp, _ = count_params_flops(teacher)
    if sp * 10 > tp:
        raise ConfigError(f"student params {sp} exceed a tenth of teacher's {tp}")
    if mode == "scratch":
        student, _ = train(corpus, cfg, cascade, widths=widths, weights=student, log=log)
        return student

    corpus = list(corpus)
    if len(corpus) < cfg.batch:
        raise ConfigError(f"corpus has {len(corpus)} images; need at least batch={cfg.batch}")
    n_val = max(1, int(len(corpus) * cfg.val_fraction))
    train_imgs = corpus[n_val:]
    s_states = [AdamState.zeros_like(bw.arrays()) for bw in student.blocks]
    t_states = [AdamState.zeros_like(bw.arrays()) for bw in teacher.blocks]
    lambdas = (1.0, 1.0, 0.1)
    t = 0
    n_train = len(train_imgs) * cfg.pairs_per_image
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(_pair_seed(cfg.seed, epoch, -1)).permutation(n_train)
        for start in range(0, n_train - cfg.batch + 1, cfg.batch):
            s_grads = [None] * len(student.blocks)
            t_grads = [None] * len(teacher.blocks)
            for j in order[start : start + cfg.batch]:
                img = train_imgs[int(j) % len(train_imgs)]
                p1, p2, truth = gen_pair(img, cfg.gamma, _pair_seed(cfg.seed, epoch, int(j)))
                _, ctx = _forward_sample(student, p1, p2, truth, need_cache=True)
                for bi, (stack, cache, s_pred, label, _acc) in enumerate(ctx):
                    t_vec, t_cache = block_forward(teacher.blocks[bi], stack, need_cache=True)
                    t_pred = WarpParams.from_vector(t_vec, s_pred.model)
                    if mode == "projection":
                        from .losses import loss_projection

                        _, g_t, g_s = loss_projection(label, t_pred, s_pred, lambdas)
                        tg = block_backward(teacher.blocks[bi], t_cache, g_t)
                        t_grads[bi] = tg if t_grads[bi] is None else [
                            a + g for a, g in zip(t_grads[bi], tg)]
                    else:
                        from .losses import loss_distill

                        _, g_s = loss_distill(t_pred, s_pred)
                    sg = block_backward(student.blocks[bi], cache, g_s)
                    s_grads[bi] = sg if s_grads[bi] is None else [
                        a + g for a, g in zip(s_grads[bi], sg)]
            t += 1
            for bi, bw in enumerate(student.blocks):
                grads = [g / cfg.batch for g in s_grads[bi]]
                arrays, s_states[bi] = adam_step(bw.arrays(), grads, s_states[bi], t, lr=cfg.lr)
                bw.set_arrays(arrays)
            if mode == "projection":
                for bi, bw in enumerate(teacher.blocks):
                    grads = [g / cfg.batch for g in t_grads[bi]]
                    arrays, t_states[bi] = adam_step(bw.arrays(), grads, t_states[bi], t,
                                                     lr=cfg.lr)
                    bw.set_arrays(arrays)
        if log:
            log(f"{mode} epoch {epoch} done")
    return student


def history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss"])
    for epoch, tr, val in history:
        w.writerow([epoch, f"{tr:.8f}", f"{val:.8f}"])
    return buf.getvalue()
