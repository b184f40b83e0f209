"""Independent brute-force reference implementations used only by tests.

Everything here is pure Python over lists of floats so it shares no code
path with the package. Inputs are (image_id, identity, vector-as-list)
triples.
"""
import math


def distance(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def nearest(query_vec, gallery, k):
    """Gallery (id, distance) pairs, ascending by (distance, id), first k."""
    scored = sorted(
        ((distance(query_vec, vec), gid) for gid, _, vec in gallery),
        key=lambda t: (t[0], t[1]),
    )
    return [(gid, d) for d, gid in scored[:k]]


def recall_at_k(queries, gallery, k):
    hits = 0
    gallery_identity = {gid: ident for gid, ident, _ in gallery}
    for qid, qident, qvec in queries:
        top = nearest(qvec, gallery, k)
        if any(gallery_identity[gid] == qident for gid, _ in top):
            hits += 1
    return 100.0 * hits / len(queries)


def between_count(query_vec, match_id, gallery):
    ref = None
    for gid, _, vec in gallery:
        if gid == match_id:
            ref = distance(query_vec, vec)
    assert ref is not None, "match must be in gallery"
    return sum(1 for gid, _, vec in gallery if distance(query_vec, vec) < ref)


def percentage(queries, gallery):
    """Prose reading: the match is the closest same-identity gallery image."""
    total = 0
    included = 0
    for qid, qident, qvec in queries:
        same = [(distance(qvec, vec), gid) for gid, ident, vec in gallery
                if ident == qident]
        if not same:
            continue
        _, match_id = min(same)
        total += between_count(qvec, match_id, gallery)
        included += 1
    assert included > 0
    return 100.0 * total / (included * len(gallery))


def max_spaced_subset_size(indices, min_gap):
    """Largest pairwise-spaced subset size by exhaustive search."""
    indices = sorted(indices)
    best = 0
    n = len(indices)
    for mask in range(1 << n):
        chosen = [indices[i] for i in range(n) if mask >> i & 1]
        if all(b - a > min_gap for a, b in zip(chosen, chosen[1:])):
            best = max(best, len(chosen))
    return best
