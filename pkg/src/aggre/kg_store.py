"""Triplet storage, vocabularies and context indices.

A triple ``(h, r, t)`` contributes

* the pair ``(r, t)`` to the entity context of ``h``,
* the pair ``(r, h)`` to the entity context of ``t``,
* the pair ``(h, t)`` to the relation context of ``r``.

Both contexts are stored CSR-style: an ``offsets`` array of length
``n + 1`` and flat per-pair arrays, each segment sorted by the id of the
triple the pair came from.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, LookupFailure, ParseError

logger = logging.getLogger(__name__)

TRAIN, VALID, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "valid", "test")


class Vocab:
    """Bijective label <-> id map; ids are assigned in insertion order."""

    def __init__(self, labels=()):
        self._labels: list[str] = []
        self._ids: dict[str, int] = {}
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        idx = self._ids.get(label)
        if idx is None:
            idx = len(self._labels)
            self._ids[label] = idx
            self._labels.append(label)
        return idx

    def id(self, label: str) -> int:
        try:
            return self._ids[label]
        except KeyError:
            near = [lab for lab in self._labels if lab.startswith(label[:3])][:5] if label else []
            hint = f"; nearest by prefix: {', '.join(near)}" if near else ""
            raise LookupFailure(f"unknown label {label!r}{hint}") from None

    def label(self, idx: int) -> str:
        return self._labels[idx]

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    def __len__(self):
        return len(self._labels)

    def __contains__(self, label):
        return label in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocab) and self._labels == other._labels

    def __repr__(self):
        return f"Vocab(size={len(self)})"


@dataclass(frozen=True)
class KnowledgeGraph:
    """Integer-encoded triples with split tags and vocabularies.

    ``triples`` is an ``(n, 3)`` int64 array of ``(head, rel, tail)``;
    ``splits`` holds ``TRAIN``/``VALID``/``TEST`` per row.
    """

    triples: np.ndarray
    splits: np.ndarray
    entity_vocab: Vocab
    relation_vocab: Vocab
    duplicates: int = 0
    cross_split_duplicates: int = 0

    def __post_init__(self):
        triples = np.ascontiguousarray(self.triples, dtype=np.int64).reshape(-1, 3)
        splits = np.ascontiguousarray(self.splits, dtype=np.int8)
        if len(splits) != len(triples):
            raise DataError("splits and triples differ in length")
        if len(triples):
            if triples.min() < 0:
                raise DataError("negative id in triples")
            if triples[:, [0, 2]].max() >= len(self.entity_vocab):
                raise DataError("entity id out of range")
            if triples[:, 1].max() >= len(self.relation_vocab):
                raise DataError("relation id out of range")
        triples.setflags(write=False)
        splits.setflags(write=False)
        object.__setattr__(self, "triples", triples)
        object.__setattr__(self, "splits", splits)

    @property
    def num_entities(self) -> int:
        return len(self.entity_vocab)

    @property
    def num_relations(self) -> int:
        return len(self.relation_vocab)

    def split_ids(self, *splits) -> np.ndarray:
        """Triple ids belonging to any of the named/numbered splits."""
        codes = [_split_code(s) for s in splits]
        return np.flatnonzero(np.isin(self.splits, codes))

    def split_triples(self, *splits) -> np.ndarray:
        return self.triples[self.split_ids(*splits)]

    @classmethod
    def from_labeled(cls, train, valid=(), test=()):
        """Build from in-memory ``(head, rel, tail)`` label tuples."""
        return _build([list(train), list(valid), list(test)])


def _split_code(split) -> int:
    if isinstance(split, str):
        try:
            return SPLIT_NAMES.index(split)
        except ValueError:
            raise ConfigurationError(f"unknown split {split!r}") from None
    return int(split)


def _build(split_rows, sources=None) -> KnowledgeGraph:
    entities, relations = Vocab(), Vocab()
    seen: dict[tuple[int, int, int], int] = {}
    triples, splits = [], []
    dup = cross = 0
    for code, rows in enumerate(split_rows):
        for h, r, t in rows:
            key = (entities.add(h), relations.add(r), entities.add(t))
            prev = seen.get(key)
            if prev is None:
                seen[key] = code
                triples.append(key)
                splits.append(code)
            elif prev == code:
                dup += 1
            else:
                cross += 1
                logger.warning("triple %s\t%s\t%s in %s already present in %s; dropped",
                               h, r, t, SPLIT_NAMES[code], SPLIT_NAMES[prev])
    if not any(s == TRAIN for s in splits):
        where = f" ({sources[0]})" if sources else ""
        raise ConfigurationError(f"train split is empty{where}")
    return KnowledgeGraph(np.array(triples, dtype=np.int64).reshape(-1, 3),
                          np.array(splits, dtype=np.int8), entities, relations,
                          duplicates=dup, cross_split_duplicates=cross)


def read_triples(path) -> list[tuple[str, str, str]]:
    """Parse a TAB-separated triple file; blank lines are skipped."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing data file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 TAB-separated fields, got {len(parts)}")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def load_dataset(train_path, valid_path=None, test_path=None) -> KnowledgeGraph:
    """Load train/valid/test files into one graph.

    Vocabulary ids follow first appearance over the train, valid, test
    scan. Repeated lines within a split are counted in ``duplicates``; a
    triple seen in an earlier split is dropped from the later one.
    """
    paths = [train_path, valid_path, test_path]
    rows = [read_triples(p) if p is not None else [] for p in paths]
    return _build(rows, sources=[str(p) for p in paths])


def load_directory(data_dir, names=("train.txt", "valid.txt", "test.txt")) -> KnowledgeGraph:
    data_dir = Path(data_dir)
    return load_dataset(*(data_dir / n for n in names))


_CTX_ARRAYS = ("entity_ctx_offsets", "entity_ctx_rel", "entity_ctx_ent", "entity_ctx_src",
               "relation_ctx_offsets", "relation_ctx_head", "relation_ctx_tail", "relation_ctx_src")


@dataclass(frozen=True, eq=False)
class ContextIndex:
    """CSR entity and relation contexts.

    Entity segment ``i`` spans ``entity_ctx_offsets[i]:entity_ctx_offsets[i+1]``
    and holds pairs ``(entity_ctx_rel, entity_ctx_ent)``; relation segment
    ``j`` holds ``(relation_ctx_head, relation_ctx_tail)``. With
    ``directed=True`` pairs reached through an incoming edge use relation
    slot ``r + num_relations`` and ``num_relation_slots`` doubles.
    """

    num_entities: int
    num_relations: int
    entity_ctx_offsets: np.ndarray
    entity_ctx_rel: np.ndarray
    entity_ctx_ent: np.ndarray
    entity_ctx_src: np.ndarray
    relation_ctx_offsets: np.ndarray
    relation_ctx_head: np.ndarray
    relation_ctx_tail: np.ndarray
    relation_ctx_src: np.ndarray
    directed: bool = False
    entity_ctx_center: np.ndarray = field(init=False, repr=False, compare=False)
    relation_ctx_center: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in _CTX_ARRAYS:
            arr = np.array(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        eoff, roff = self.entity_ctx_offsets, self.relation_ctx_offsets
        if len(eoff) != self.num_entities + 1 or len(roff) != self.num_relation_slots + 1:
            raise DataError("offset arrays have the wrong length")
        if np.any(np.diff(eoff) < 0) or np.any(np.diff(roff) < 0):
            raise DataError("offsets must be non-decreasing")
        if eoff[0] != 0 or eoff[-1] != len(self.entity_ctx_rel) or roff[0] != 0 \
                or roff[-1] != len(self.relation_ctx_head):
            raise DataError("offsets inconsistent with pair arrays")
        ec = np.repeat(np.arange(self.num_entities), np.diff(eoff))
        rc = np.repeat(np.arange(self.num_relation_slots), np.diff(roff))
        ec.setflags(write=False)
        rc.setflags(write=False)
        object.__setattr__(self, "entity_ctx_center", ec)
        object.__setattr__(self, "relation_ctx_center", rc)

    def __eq__(self, other):
        if not isinstance(other, ContextIndex):
            return NotImplemented
        return (self.num_entities, self.num_relations, self.directed) == \
            (other.num_entities, other.num_relations, other.directed) and all(
                np.array_equal(getattr(self, f), getattr(other, f)) for f in _CTX_ARRAYS)

    __hash__ = None

    @property
    def num_relation_slots(self) -> int:
        return 2 * self.num_relations if self.directed else self.num_relations

    @property
    def entity_ctx_pairs(self) -> np.ndarray:
        return np.stack([self.entity_ctx_rel, self.entity_ctx_ent], axis=1)

    @property
    def relation_ctx_pairs(self) -> np.ndarray:
        return np.stack([self.relation_ctx_head, self.relation_ctx_tail], axis=1)

    @property
    def num_entity_pairs(self) -> int:
        return len(self.entity_ctx_rel)

    @property
    def num_relation_pairs(self) -> int:
        return len(self.relation_ctx_head)

    def entity_context(self, i):
        """``(rel, entity, source_triple)`` rows of entity ``i``."""
        s = slice(self.entity_ctx_offsets[i], self.entity_ctx_offsets[i + 1])
        return list(zip(self.entity_ctx_rel[s].tolist(), self.entity_ctx_ent[s].tolist(),
                        self.entity_ctx_src[s].tolist()))

    def relation_context(self, j):
        s = slice(self.relation_ctx_offsets[j], self.relation_ctx_offsets[j + 1])
        return list(zip(self.relation_ctx_head[s].tolist(), self.relation_ctx_tail[s].tolist(),
                        self.relation_ctx_src[s].tolist()))

    def restrict(self, exclude=None, cap=None, rng=None) -> "ContextIndex":
        """Drop pairs whose source triple is in ``exclude``; optionally keep
        at most ``cap`` uniformly sampled pairs per segment (needs ``rng``).
        """
        ekeep = np.ones(self.num_entity_pairs, dtype=bool)
        rkeep = np.ones(self.num_relation_pairs, dtype=bool)
        if exclude is not None and len(exclude):
            exclude = np.asarray(exclude, dtype=np.int64)
            ekeep &= ~np.isin(self.entity_ctx_src, exclude)
            rkeep &= ~np.isin(self.relation_ctx_src, exclude)
        if cap is not None:
            if rng is None:
                raise ConfigurationError("neighbor cap requires a random generator")
            ekeep &= _cap_mask(self.entity_ctx_center, ekeep, self.num_entities, cap, rng)
            rkeep &= _cap_mask(self.relation_ctx_center, rkeep, self.num_relation_slots, cap, rng)
        if ekeep.all() and rkeep.all():
            return self
        return replace(
            self,
            entity_ctx_offsets=_offsets(self.entity_ctx_center[ekeep], self.num_entities),
            entity_ctx_rel=self.entity_ctx_rel[ekeep],
            entity_ctx_ent=self.entity_ctx_ent[ekeep],
            entity_ctx_src=self.entity_ctx_src[ekeep],
            relation_ctx_offsets=_offsets(self.relation_ctx_center[rkeep], self.num_relation_slots),
            relation_ctx_head=self.relation_ctx_head[rkeep],
            relation_ctx_tail=self.relation_ctx_tail[rkeep],
            relation_ctx_src=self.relation_ctx_src[rkeep],
        )


def _offsets(centers, n):
    out = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(centers, minlength=n), out=out[1:])
    return out


def _cap_mask(centers, alive, n, cap, rng):
    counts = np.bincount(centers[alive], minlength=n)
    mask = np.ones(len(centers), dtype=bool)
    for seg in np.flatnonzero(counts > cap):
        idx = np.flatnonzero((centers == seg) & alive)
        drop = rng.choice(idx, size=len(idx) - cap, replace=False)
        mask[drop] = False
    return mask


def build_context_index(kg: KnowledgeGraph, splits=("train",), directed=False) -> ContextIndex:
    """Context index over the triples of ``splits`` (train only by default)."""
    tid = kg.split_ids(*splits)
    h, r, t = kg.triples[tid].T
    loop = h == t
    nr = kg.num_relations

    # outgoing pair (r, t) at h; incoming pair (r, h) at t unless it duplicates a self-loop
    inc = ~loop if not directed else np.ones(len(tid), dtype=bool)
    centers = np.concatenate([h, t[inc]])
    rels = np.concatenate([r, r[inc] + (nr if directed else 0)])
    nbrs = np.concatenate([t, h[inc]])
    srcs = np.concatenate([tid, tid[inc]])
    order = np.lexsort((np.arange(len(srcs)), srcs, centers))

    rcenters, rheads, rtails, rsrcs = r, h, t, tid
    if directed:
        rcenters = np.concatenate([r, r + nr])
        rheads = np.concatenate([h, t])
        rtails = np.concatenate([t, h])
        rsrcs = np.concatenate([tid, tid])
    rorder = np.lexsort((rsrcs, rcenters))
    nslots = 2 * nr if directed else nr

    return ContextIndex(
        num_entities=kg.num_entities,
        num_relations=nr,
        entity_ctx_offsets=_offsets(centers, kg.num_entities),
        entity_ctx_rel=rels[order],
        entity_ctx_ent=nbrs[order],
        entity_ctx_src=srcs[order],
        relation_ctx_offsets=_offsets(rcenters, nslots),
        relation_ctx_head=rheads[rorder],
        relation_ctx_tail=rtails[rorder],
        relation_ctx_src=rsrcs[rorder],
        directed=directed,
    )
