"""Small random graphs for tests, demos and sanity runs."""

from __future__ import annotations

import numpy as np

from .kg_store import KnowledgeGraph


def random_graph(num_triples, num_entities, num_relations, seed=0, unordered_unique=True,
                 self_loops=False, valid=0, test=0) -> KnowledgeGraph:
    """Random labelled graph with distinct triples.

    With ``unordered_unique`` no two triples share an entity pair in either
    order, so every ``(h, t)`` has exactly one answer even for a symmetric
    scorer. ``valid``/``test`` extra triples are drawn the same way.
    """
    rng = np.random.default_rng(seed)
    total = num_triples + valid + test
    seen, rows = set(), []
    # every relation is used at least once so the vocabulary has the requested size
    rel_cycle = list(range(num_relations))
    attempts = 0
    while len(rows) < total:
        attempts += 1
        if attempts > 1000 * total:
            raise ValueError("could not draw enough distinct triples; graph too dense")
        h, t = (int(x) for x in rng.integers(num_entities, size=2))
        if h == t and not self_loops:
            continue
        key = (min(h, t), max(h, t)) if unordered_unique else (h, t)
        if key in seen:
            continue
        seen.add(key)
        r = rel_cycle.pop() if rel_cycle else int(rng.integers(num_relations))
        rows.append((f"e{h}", f"r{r}", f"e{t}"))
    return KnowledgeGraph.from_labeled(rows[:num_triples], rows[num_triples:num_triples + valid],
                                       rows[num_triples + valid:])
