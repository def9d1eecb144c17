"""Brute-force references, written independently of the library code paths."""

from itertools import combinations
import math


def cos_ref(a, b):
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    return dot / (na * nb)


def argmax_ref(image, class_vectors: dict):
    """Loop over every class; the smallest id wins exact ties."""
    best, best_s = None, -math.inf
    for cid in sorted(class_vectors):
        s = cos_ref(image, class_vectors[cid])
        if s > best_s:
            best, best_s = cid, s
    return best


def best_subset_ref(image, class_vectors: dict, k: int, tol: float = 1e-9):
    """Enumerate every k-subset and maximise the summed cosine.

    Among subsets whose sum is within ``tol`` of the best, the one whose sorted
    id tuple is lexicographically smallest is returned (this is where ties
    between equal class vectors are decided).
    """
    sims = {c: cos_ref(image, v) for c, v in class_vectors.items()}
    ids = sorted(class_vectors)
    k = min(k, len(ids))
    best_sum = max(math.fsum(sims[c] for c in s) for s in combinations(ids, k))
    winners = [s for s in combinations(ids, k) if math.fsum(sims[c] for c in s) >= best_sum - tol]
    return set(min(winners))
