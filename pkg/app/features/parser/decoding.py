"""Maximum spanning arborescence decoding over ``scores[dependent, head]`` matrices.

Row and column 0 stand for ROOT, which is only ever a head.
"""

from typing import Optional, Sequence

import numpy as np


def find_cycle(heads: Sequence[int]) -> Optional[list[int]]:
    """Nodes of one cycle in a head assignment (index 0 ignored), or None."""
    state = [0] * len(heads)
    state[0] = 2
    for start in range(1, len(heads)):
        walk: list[int] = []
        node = start
        while state[node] == 0:
            state[node] = 1
            walk.append(node)
            node = int(heads[node])
        if state[node] == 1:
            return walk[walk.index(node) :]
        for visited in walk:
            state[visited] = 2
    return None


def chu_liu_edmonds(scores: np.ndarray) -> np.ndarray:
    """Unconstrained maximum spanning arborescence rooted at node 0.

    Ties go to the lowest head index. The result may attach several words to ROOT.

    Args:
        scores: ``(n + 1, n + 1)`` float matrix, ``scores[i, j]`` scoring head ``j``
            for dependent ``i``.

    Returns:
        np.ndarray: Head of every node; entry 0 is 0.
    """
    s = np.array(scores, dtype=np.float64)
    s[0, :] = -np.inf
    s[0, 0] = 0.0
    diagonal = np.arange(1, len(s))
    s[diagonal, diagonal] = -np.inf
    tree = s.argmax(axis=1)
    cycle = find_cycle(tree)
    if cycle is None:
        return tree

    cycle_nodes = np.array(cycle)
    in_cycle = np.zeros(len(s), dtype=bool)
    in_cycle[cycle_nodes] = True
    outside = np.flatnonzero(~in_cycle)
    cycle_scores = s[cycle_nodes, tree[cycle_nodes]]

    # best cycle node to head each outside dependent
    dep_scores = s[np.ix_(outside, cycle_nodes)]
    deps = dep_scores.argmax(axis=1)
    # best way into the cycle from each outside head, breaking the replaced edge
    head_scores = s[np.ix_(cycle_nodes, outside)] - cycle_scores[:, None] + cycle_scores.sum()
    heads = head_scores.argmax(axis=0)

    m = len(outside)
    contracted = np.full((m + 1, m + 1), -np.inf)
    contracted[:m, :m] = s[np.ix_(outside, outside)]
    contracted[:m, m] = dep_scores[np.arange(m), deps]
    contracted[m, :m] = head_scores[heads, np.arange(m)]

    sub = chu_liu_edmonds(contracted)
    tree = tree.copy()
    for k, node in enumerate(outside):
        if node == 0:
            continue
        head = sub[k]
        tree[node] = outside[head] if head < m else cycle_nodes[deps[k]]
    entry = sub[m]
    tree[cycle_nodes[heads[entry]]] = outside[entry]
    return tree


def tree_score(scores: np.ndarray, heads: Sequence[int]) -> float:
    """Sum of ``scores[i, heads[i - 1]]`` over words ``i = 1..n``."""
    return float(sum(scores[i, h] for i, h in enumerate(heads, start=1)))


def decode_mst(scores: np.ndarray) -> list[int]:
    """Maximum spanning tree with exactly one word attached to ROOT.

    When the unconstrained arborescence has several root children, every word is
    tried as the single root child and the best tree is kept (lowest word on ties).

    Args:
        scores: ``(n + 1, n + 1)`` matrix of finite scores, dependent by head.

    Returns:
        list[int]: Heads of words ``1..n``.

    Raises:
        ValueError: If the sentence has no words.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError(f"expected a square score matrix, got shape {scores.shape}")
    n = scores.shape[0] - 1
    if n < 1:
        raise ValueError("cannot decode a tree over zero words")
    if n == 1:
        return [0]
    tree = chu_liu_edmonds(scores)
    if int((tree[1:] == 0).sum()) == 1:
        return tree[1:].tolist()

    best: Optional[list[int]] = None
    best_score = -np.inf
    for root in range(1, n + 1):
        masked = scores.copy()
        masked[1:, 0] = -np.inf
        masked[root, 0] = scores[root, 0]
        heads = chu_liu_edmonds(masked)[1:].tolist()
        score = tree_score(scores, heads)
        if best is None or score > best_score:
            best, best_score = heads, score
    return best
