"""Mini-batch training and evaluation loops."""

import time

import numpy as np

from .data import batch_iter
from .errors import NonFinite, RankDeficient
from .network import forward, loss_and_grads, vote
from .optim import OptimState, sgd_step

__all__ = ["evaluate", "train_epoch", "fit"]

EVAL_CHUNK = 256


def evaluate(model, samples, chunk=EVAL_CHUNK):
    """Loss terms, per-head and voted accuracy, confusion matrix on a sample set.

    Returns
    -------
    dict
        ``n``, ``loss``, ``ce``, ``rt``, ``head_acc`` (one per head, in stage
        order), ``vote_acc`` and ``confusion`` (rows = true class).
    """
    if len(samples) == 0:
        raise ValueError("cannot evaluate an empty sample set")
    cfg = model.config
    ce_sum = rt_sum = 0.0
    head_pred, vote_pred = [], []
    for start in range(0, len(samples), chunk):
        x = samples.matrices[start : start + chunk]
        y = samples.labels[start : start + chunk]
        trace = forward(model, x, y)
        ce_sum += float(np.sum(trace.ce))
        rt_sum += float(np.sum(trace.rt))
        probs = np.stack(trace.head_probs(cfg), axis=1)
        labels = np.argmax(probs, axis=-1)
        head_pred.append(labels)
        vote_pred.append(vote(labels, probs, cfg.num_classes))
    n = len(samples)
    head_pred = np.concatenate(head_pred)
    vote_pred = np.concatenate(vote_pred)
    truth = samples.labels
    confusion = np.zeros((cfg.num_classes, cfg.num_classes), dtype=np.int64)
    np.add.at(confusion, (truth, vote_pred), 1)
    ce, rt = ce_sum / n, rt_sum / n
    return {
        "n": n,
        "loss": ce + cfg.lambda_rt * rt,
        "ce": ce,
        "rt": rt,
        "head_acc": [float(np.mean(head_pred[:, j] == truth)) for j in range(head_pred.shape[1])],
        "vote_acc": float(np.mean(vote_pred == truth)),
        "confusion": confusion.tolist(),
    }


def train_epoch(model, samples, state, batch_size, seed):
    """One pass over ``samples``; returns the updated model and the mean batch loss."""
    total, count = 0.0, 0
    for idx in batch_iter(len(samples), batch_size, seed):
        loss, grads, _ = loss_and_grads(model, samples.matrices[idx], samples.labels[idx])
        if not np.isfinite(loss):
            raise NonFinite(f"non-finite loss {loss}")
        model = sgd_step(model, grads, state)
        if not all(np.all(np.isfinite(w)) for w in model.params.values()):
            raise NonFinite("parameters diverged")
        total += loss * len(idx)
        count += len(idx)
    return model, total / count


def fit(
    model,
    train_set,
    epochs,
    state=None,
    batch_size=30,
    seed=0,
    test_set=None,
    eval_period=1,
    start_epoch=1,
    on_epoch=None,
    track_train=True,
):
    """Train for ``epochs`` epochs and return ``(model, records)``.

    Each record holds the epoch number, the mean mini-batch loss, evaluation
    of the end-of-epoch model on the training set (and on ``test_set`` every
    ``eval_period`` epochs), the learning rate used, and the wall time, which
    is kept under the separate ``timing`` key.

    ``on_epoch(model, record)`` is called after every epoch. With
    ``track_train=False`` the per-epoch training-set evaluation is skipped and
    records carry only the batch loss, the learning rate and test metrics.
    """
    if state is None:
        state = OptimState()
    state.steps_per_epoch = max(1, -(-len(train_set) // batch_size))
    records = []
    for epoch in range(start_epoch, start_epoch + epochs):
        t0 = time.perf_counter()
        lr = state.current_lr
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                model, batch_loss = train_epoch(model, train_set, state, batch_size, [seed, epoch])
                ev = evaluate(model, train_set) if track_train else None
                tv = None
                if test_set is not None and epoch % eval_period == 0:
                    tv = evaluate(model, test_set)
        except (NonFinite, RankDeficient, np.linalg.LinAlgError) as exc:
            raise NonFinite(f"epoch {epoch}: {exc}") from exc
        rec = {"epoch": epoch, "train_loss": batch_loss}
        if ev is not None:
            rec.update(loss=ev["loss"], rt=ev["rt"], head_acc=ev["head_acc"], vote_acc=ev["vote_acc"])
        rec["lr"] = lr
        if tv is not None:
            rec["test_head_acc"] = tv["head_acc"]
            rec["test_vote_acc"] = tv["vote_acc"]
        rec["timing"] = {"epoch_seconds": time.perf_counter() - t0}
        records.append(rec)
        if on_epoch is not None:
            on_epoch(model, rec)
    return model, records
