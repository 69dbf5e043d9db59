"""Mini-batch Adam training, checkpoints and the per-epoch JSON log."""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import (CheckpointFormatError, ConfigurationError, NumericalError,
                     StorageError)
from .evaluation import evaluate_state
from .kg_store import ContextIndex, KnowledgeGraph
from .model import EmbeddingState, init_embeddings, loss_and_grad

logger = logging.getLogger(__name__)

MAGIC = b"AGGRE1"
ADAM_MAGIC = b"ADAM"
_HEADER = struct.Struct("<6I")


@dataclass
class AdamState:
    """First/second moments per table and the global step count."""

    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr, betas=(0.9, 0.999), eps=1e-8, lazy=True):
    """In-place Adam update with bias correction.

    ``params``/``grads`` are matching lists of 2-D tables. With ``lazy``
    only rows carrying a nonzero gradient are updated, and their moments
    are the only ones decayed. ``state.t`` advances once per call.
    """
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ConfigurationError("parameter, gradient and moment shapes differ")
        rows = np.flatnonzero(np.any(g != 0, axis=1)) if lazy else slice(None)
        gr = g[rows]
        m[rows] = b1 * m[rows] + (1 - b1) * gr
        v[rows] = b2 * v[rows] + (1 - b2) * gr * gr
        with np.errstate(invalid="ignore", over="ignore"):
            update = (lr / bc1) * m[rows] / (np.sqrt(v[rows] / bc2) + eps)
        if not np.isfinite(update).all():
            raise NumericalError("non-finite Adam update")
        p[rows] -= update.astype(p.dtype, copy=False)
    return params, state


@dataclass
class TrainResult:
    state: EmbeddingState
    log: list
    best_epoch: int
    adam: AdamState
    last_state: EmbeddingState


def _epoch_batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train(kg: KnowledgeGraph, ctx: ContextIndex, config: TrainConfig, out_dir=None,
          eval_mode="raw", known=None, on_epoch=None) -> TrainResult:
    """Optimize both embedding tables on the train split.

    Validation metrics are computed after every epoch when the graph has
    a valid split; the returned ``state`` is the one with the best
    validation MRR (the last one otherwise). With ``out_dir`` the best and
    last checkpoints and ``train_log.jsonl`` are written there.
    """
    train_ids = kg.split_ids("train")
    if len(train_ids) == 0:
        raise ConfigurationError("train split is empty")
    valid = kg.split_triples("valid")
    rng = np.random.default_rng(config.seed)
    state = init_embeddings(kg.num_entities, ctx.num_relation_slots, config.dim, rng, config.dtype)
    adam = AdamState.zeros_like([state.entity_table, state.relation_table])
    best, best_mrr, best_epoch, stale = state.copy(), -np.inf, 0, 0
    log = []
    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            log_fh = open(out_dir / "train_log.jsonl", "w")
        except OSError as exc:
            raise StorageError(f"cannot write to {out_dir}: {exc}") from exc

    try:
        for epoch in range(1, config.max_epochs + 1):
            start = time.perf_counter()
            losses, sizes = [], []
            for b, idx in enumerate(_epoch_batches(len(train_ids), config.batch_size, rng)):
                ids = train_ids[idx]
                try:
                    loss, grads = loss_and_grad(state, ctx, kg.triples[ids], config,
                                                batch_ids=ids, rng=rng, batch_index=b)
                    adam_step([state.entity_table, state.relation_table],
                              [grads.entity_grad, grads.relation_grad], adam,
                              config.learning_rate, (config.adam_beta1, config.adam_beta2),
                              config.adam_eps, lazy=config.lazy_adam)
                except NumericalError as exc:
                    raise NumericalError(str(exc).split(" (")[0], epoch=epoch, batch=b) from exc
                losses.append(loss)
                sizes.append(len(ids))
            if not state.is_finite():
                raise NumericalError("non-finite parameters", epoch=epoch)

            entry = {"epoch": epoch, "mean_loss": float(np.average(losses, weights=sizes)),
                     "val_mrr": None, "val_mr": None, "val_hit3": None}
            if len(valid):
                rep = evaluate_state(state, ctx, valid, config.num_layers, mode=eval_mode,
                                     known=known, strict=config.strict_determinism)
                entry.update(val_mrr=rep.mrr, val_mr=rep.mr, val_hit3=rep.hit3)
            entry["wall_seconds"] = time.perf_counter() - start
            log.append(entry)
            logger.info("epoch %d loss %.5f val_mrr %s", epoch, entry["mean_loss"], entry["val_mrr"])

            score = entry["val_mrr"] if entry["val_mrr"] is not None else epoch
            if score > best_mrr:
                best, best_mrr, best_epoch, stale = state.copy(), score, epoch, 0
                if out_dir is not None:
                    save_checkpoint(out_dir / "best.ckpt", best, config.num_layers, config.seed,
                                    epoch, adam)
            else:
                stale += 1
            if log_fh is not None:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if on_epoch is not None:
                on_epoch(entry, state)
            if config.patience is not None and stale >= config.patience:
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    if out_dir is not None:
        save_checkpoint(out_dir / "last.ckpt", state, config.num_layers, config.seed,
                        len(log), adam)
        if not log:
            save_checkpoint(out_dir / "best.ckpt", best, config.num_layers, config.seed, 0)
    return TrainResult(best, log, best_epoch, adam, state)


def save_checkpoint(path, state: EmbeddingState, num_layers, seed, epoch, adam=None, vocabs=None):
    """Binary checkpoint: magic, ``<6I`` header (d, |E|, |R|, L, seed, epoch),
    little-endian float32 entity then relation rows, then optionally
    ``ADAM`` + ``<Q`` step + four float32 moment tables.
    """
    path = Path(path)
    ne, d = state.entity_table.shape
    nr = state.relation_table.shape[0]
    parts = [MAGIC, _HEADER.pack(d, ne, nr, num_layers, seed, epoch),
             state.entity_table.astype("<f4").tobytes(), state.relation_table.astype("<f4").tobytes()]
    if adam is not None:
        parts += [ADAM_MAGIC, struct.pack("<Q", adam.t)]
        parts += [a.astype("<f4").tobytes() for a in (adam.m[0], adam.v[0], adam.m[1], adam.v[1])]
    try:
        path.write_bytes(b"".join(parts))
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc
    if vocabs is not None:
        write_vocabs(path, *vocabs)


def write_vocabs(path, entity_vocab, relation_vocab):
    """Vocabularies next to a checkpoint, one label per line in id order."""
    path = Path(path)
    try:
        for suffix, vocab in ((".entities.txt", entity_vocab), (".relations.txt", relation_vocab)):
            path.with_name(path.name + suffix).write_text(
                "".join(label + "\n" for label in vocab.labels), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write vocabularies next to {path}: {exc}") from exc


@dataclass
class Checkpoint:
    state: EmbeddingState
    num_layers: int
    seed: int
    epoch: int
    adam: AdamState | None = None


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes, not an AggrE checkpoint")
    pos = len(MAGIC)
    if len(raw) < pos + _HEADER.size:
        raise CheckpointFormatError(f"{path}: truncated header")
    d, ne, nr, layers, seed, epoch = _HEADER.unpack_from(raw, pos)
    pos += _HEADER.size

    def table(rows):
        nonlocal pos
        size = rows * d * 4
        if len(raw) < pos + size:
            raise CheckpointFormatError(f"{path}: truncated table data")
        arr = np.frombuffer(raw, dtype="<f4", count=rows * d, offset=pos).reshape(rows, d)
        pos += size
        return arr.astype(np.float32)

    state = EmbeddingState(table(ne), table(nr))
    adam = None
    if pos < len(raw):
        if raw[pos:pos + len(ADAM_MAGIC)] != ADAM_MAGIC:
            raise CheckpointFormatError(f"{path}: unexpected trailing data")
        pos += len(ADAM_MAGIC)
        (t,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        me, ve, mr, vr = table(ne), table(ne), table(nr), table(nr)
        adam = AdamState([me, mr], [ve, vr], t)
        if pos != len(raw):
            raise CheckpointFormatError(f"{path}: unexpected trailing data")
    if not state.is_finite():
        raise CheckpointFormatError(f"{path}: non-finite parameters")
    return Checkpoint(state, layers, seed, epoch, adam)
