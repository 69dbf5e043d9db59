"""Relation-prediction ranking: rank the true relation of each ``(h, ?, t)``."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .model import aggregate, relation_logits

RAW, FILTERED = "raw", "filtered"


def rank_from_scores(scores, true_rel, candidate_mask=None) -> np.ndarray:
    """Mean-tie rank of ``true_rel`` in each score row.

    ``rank = 1 + #{s_j > s_true} + #{j != true: s_j == s_true} / 2``,
    counted over the candidates left in ``candidate_mask`` (the true
    relation is always a candidate).
    """
    scores = np.atleast_2d(np.asarray(scores))
    true_rel = np.atleast_1d(np.asarray(true_rel, dtype=np.int64))
    n, nr = scores.shape
    if len(true_rel) != n or true_rel.min(initial=0) < 0 or true_rel.max(initial=0) >= nr:
        raise ContractViolation("true relation id out of range")
    rows = np.arange(n)
    true_score = scores[rows, true_rel][:, None]
    if candidate_mask is None:
        candidate_mask = np.ones_like(scores, dtype=bool)
    cand = candidate_mask.copy()
    cand[rows, true_rel] = False
    higher = ((scores > true_score) & cand).sum(axis=1)
    ties = ((scores == true_score) & cand).sum(axis=1)
    return 1.0 + higher + ties / 2.0


def rank_relations(trace, query, mode=RAW, known=None) -> float:
    """Rank of the true relation for one ``(h, r, t)`` query."""
    h, r, t = (int(x) for x in query)
    nr = trace.ctx.num_relations
    if not (0 <= h < trace.ctx.num_entities and 0 <= t < trace.ctx.num_entities and 0 <= r < nr):
        raise ContractViolation(f"query {query} out of range")
    scores = relation_logits(trace, [(h, t)])
    mask = None
    if mode == FILTERED:
        mask = filter_mask(np.array([[h, r, t]]), known or {}, nr)
    return float(rank_from_scores(scores, [r], mask)[0])


def known_relations(triples) -> dict:
    """``(h, t) -> set of relations`` over the given triples."""
    known = defaultdict(set)
    for h, r, t in np.asarray(triples).tolist():
        known[(h, t)].add(r)
    return dict(known)


def filter_mask(queries, known, num_relations) -> np.ndarray:
    """Candidate mask with the other known relations of each pair removed."""
    mask = np.ones((len(queries), num_relations), dtype=bool)
    for q, (h, r, t) in enumerate(np.asarray(queries).tolist()):
        for other in known.get((h, t), ()):
            if other != r:
                mask[q, other] = False
    return mask


def compute_metrics(ranks, k=3):
    """``(mrr, mr, hit@k)`` of an array of ranks."""
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ContractViolation("cannot compute metrics over zero queries")
    return float(np.mean(1.0 / ranks)), float(np.mean(ranks)), float(np.mean(ranks <= k))


@dataclass
class RankingReport:
    mode: str
    queries: np.ndarray
    ranks: np.ndarray
    mrr: float
    mr: float
    hit3: float
    tie_policy: str = "mean"
    hits_k: int = 3
    extra: dict = field(default_factory=dict)

    @property
    def num_queries(self) -> int:
        return len(self.ranks)

    def to_dict(self, per_query=False, config=None, labels=None):
        out = {
            "mode": self.mode,
            "tie_policy": self.tie_policy,
            "num_queries": self.num_queries,
            "mrr": self.mrr,
            "mr": self.mr,
            f"hit{self.hits_k}": self.hit3,
        }
        out.update(self.extra)
        if config is not None:
            out["config"] = config
        if per_query:
            rows = []
            for (h, r, t), rank in zip(self.queries.tolist(), self.ranks.tolist()):
                if labels is not None:
                    ent, rel = labels
                    h, r, t = ent.label(h), rel.label(r), ent.label(t)
                rows.append({"head": h, "relation": r, "tail": t, "rank": rank})
            out["per_query"] = rows
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(**kwargs), indent=2)

    def table(self, name="AggrE", dataset="") -> str:
        head = f"{'':10s}| {dataset or 'split':^26s}"
        cols = f"{'':10s}| {'MRR':>8s} {'MR':>8s} {'Hit@' + str(self.hits_k):>8s}"
        row = f"{name:10s}| {self.mrr:8.3f} {self.mr:8.3f} {self.hit3:8.3f}"
        return "\n".join([head, cols, "-" * len(cols), row, f"({self.mode} ranking, mean ties)"])


def evaluate(trace, queries, mode=RAW, known=None, k=3, chunk=4096) -> RankingReport:
    """Rank every query triple against all relations using final activations."""
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    if mode not in (RAW, FILTERED):
        raise ContractViolation(f"unknown ranking mode {mode!r}")
    nr = trace.ctx.num_relations
    ranks = np.empty(len(queries))
    for start in range(0, len(queries), chunk):
        q = queries[start:start + chunk]
        scores = relation_logits(trace, q[:, [0, 2]])
        mask = filter_mask(q, known or {}, nr) if mode == FILTERED else None
        ranks[start:start + chunk] = rank_from_scores(scores, q[:, 1], mask)
    mrr, mr, hitk = compute_metrics(ranks, k) if len(ranks) else (float("nan"),) * 3
    return RankingReport(mode, queries, ranks, mrr, mr, hitk, hits_k=k)


def evaluate_state(state, ctx, queries, num_layers, mode=RAW, known=None, strict=False, k=3):
    trace = aggregate(state, ctx, num_layers, strict=strict)
    return evaluate(trace, queries, mode=mode, known=known, k=k)
