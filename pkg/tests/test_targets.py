import math

import numpy as np
import pytest

from privkit import (
    ContractViolation,
    IdentityEmbedding,
    SelectionError,
    select_target,
    select_targets_batch,
)
from privkit.targets import load_target_pairs, save_target_pairs
from conftest import make_image

SHAPE = (1, 1, 1)


def image_at(image_id, identity, value):
    return make_image(image_id, identity, pixels=np.full(SHAPE, value))


@pytest.fixture
def embedding():
    return IdentityEmbedding(SHAPE, name="e1")


class TestSelectTarget:
    def test_single_candidate(self, embedding):
        original = image_at("o", "alice", 0.0)
        pool = [image_at("t", "bob", 0.9)]
        pair = select_target(original, pool, embedding, seed=0)
        assert pair.target_id == "t"
        assert pair.pool_rank == 1
        assert pair.distance == pytest.approx(0.9)

    def test_same_identity_never_selected(self, embedding):
        original = image_at("o", "alice", 0.0)
        pool = [image_at("same", "alice", 1.0), image_at("other", "bob", 0.6)]
        for seed in range(25):
            pair = select_target(original, pool, embedding, far_fraction=1.0, seed=seed)
            assert pair.target_id == "other"

    def test_pick_lands_in_far_quantile(self, embedding):
        # 10 candidates on a line; far_fraction 0.2 keeps the top 2 distances.
        original = image_at("o", "alice", 0.0)
        pool = [image_at(f"c{i}", f"p{i}", v)
                for i, v in enumerate([0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.85, 0.95])]
        # Exhaustive sort oracle over the eligible pool.
        dists = sorted(((abs(0.0 - float(img.pixels.reshape(-1)[0])), img.id)
                        for img in pool), key=lambda t: (-t[0], t[1]))
        cut = math.ceil(0.2 * len(pool))
        allowed = {cid for _, cid in dists[:cut]}
        assert allowed == {"c9", "c8"}
        seen = set()
        for seed in range(40):
            pair = select_target(original, pool, embedding, far_fraction=0.2, seed=seed)
            assert pair.target_id in allowed
            assert pair.pool_rank <= cut
            seen.add(pair.target_id)
        assert seen == allowed  # both far candidates reachable across seeds

    def test_distance_at_least_quantile(self, embedding):
        rng = np.random.default_rng(3)
        original = image_at("o", "alice", 0.5)
        pool = [image_at(f"c{i}", f"p{i}", float(v))
                for i, v in enumerate(rng.uniform(size=17))]
        dists = sorted(abs(0.5 - float(img.pixels.reshape(-1)[0])) for img in pool)
        quantile = dists[math.floor((1 - 0.1) * (len(dists) - 1))]
        for seed in range(10):
            pair = select_target(original, pool, embedding, far_fraction=0.1, seed=seed)
            assert pair.distance >= quantile - 1e-12

    def test_empty_eligible_pool(self, embedding):
        original = image_at("o", "alice", 0.0)
        with pytest.raises(SelectionError):
            select_target(original, [image_at("x", "alice", 1.0)], embedding)

    def test_tie_break_by_id(self, embedding):
        original = image_at("o", "alice", 0.0)
        pool = [image_at("b", "p1", 0.8), image_at("a", "p2", 0.8)]
        pair = select_target(original, pool, embedding, far_fraction=0.5, seed=0)
        assert pair.target_id == "a"  # equal distance, ascending id wins the cut

    def test_bad_far_fraction(self, embedding):
        original = image_at("o", "alice", 0.0)
        with pytest.raises(ContractViolation):
            select_target(original, [image_at("t", "bob", 1.0)], embedding,
                          far_fraction=0.0)

    def test_forward_only_backend_is_fine(self):
        class ForwardOnly(IdentityEmbedding):
            supports_gradient = False

        backend = ForwardOnly(SHAPE, name="fwd")
        pair = select_target(image_at("o", "alice", 0.0),
                             [image_at("t", "bob", 0.9)], backend, seed=0)
        assert pair.target_id == "t"


class TestSelectTargetsBatch:
    def test_empty_originals(self, embedding):
        assert select_targets_batch([], [image_at("t", "bob", 1.0)], embedding) == []

    def test_each_pair_satisfies_contract(self, embedding):
        rng = np.random.default_rng(5)
        originals = [image_at(f"o{i}", f"q{i}", float(v))
                     for i, v in enumerate(rng.uniform(size=3))]
        pool = [image_at(f"c{i}", f"p{i}", float(v))
                for i, v in enumerate(rng.uniform(size=5))]
        pairs = select_targets_batch(originals, pool, embedding,
                                     far_fraction=0.4, seed=7)
        assert len(pairs) == 3
        cut = math.ceil(0.4 * 5)
        for original, pair in zip(originals, pairs):
            assert pair.original_id == original.id
            # Re-check with the sort oracle.
            q = float(original.pixels.reshape(-1)[0])
            ranked = sorted(((abs(q - float(img.pixels.reshape(-1)[0])), img.id)
                             for img in pool), key=lambda t: (-t[0], t[1]))
            allowed = {cid for _, cid in ranked[:cut]}
            assert pair.target_id in allowed
            assert pair.distance == pytest.approx(dict(
                (cid, d) for d, cid in ranked)[pair.target_id])

    def test_determinism(self, embedding):
        rng = np.random.default_rng(5)
        originals = [image_at(f"o{i}", f"q{i}", float(v))
                     for i, v in enumerate(rng.uniform(size=4))]
        pool = [image_at(f"c{i}", f"p{i}", float(v))
                for i, v in enumerate(rng.uniform(size=9))]
        first = select_targets_batch(originals, pool, embedding, seed=42)
        second = select_targets_batch(originals, pool, embedding, seed=42)
        assert first == second

    def test_pool_overlap_rejected(self, embedding):
        shared = image_at("dup", "bob", 0.4)
        with pytest.raises(ContractViolation):
            select_targets_batch([shared], [shared], embedding)


class TestPersistence:
    def test_jsonl_round_trip(self, tmp_path, embedding):
        original = image_at("o", "alice", 0.0)
        pool = [image_at("t", "bob", 0.9), image_at("u", "carol", 0.7)]
        pairs = select_targets_batch([original], pool, embedding, seed=1)
        path = save_target_pairs(tmp_path / "targets.jsonl", pairs)
        assert load_target_pairs(path) == pairs
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 1
