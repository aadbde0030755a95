# tests/test_retrieval_eval.py
import numpy as np
import pytest

from swampkit.errors import ContractError, DimensionError
from swampkit.model import Model
from swampkit.ndmath import normalize_rows
from swampkit.retrieval_eval import (
    evaluate_embeddings,
    evaluate_model,
    full_report,
    rank_matrix,
    reports_frame,
    score,
    truth_ranks,
)


def _oracle(Fq, Fg, truth, gallery_truth, error_type):
    """Full sort over recomputed dot products, one query at a time."""
    ranks = []
    for i in range(Fq.shape[0]):
        dots = [(-float(np.dot(Fq[i], Fg[j])), j) for j in range(Fg.shape[0])]
        order = [j for _, j in sorted(dots)]
        for pos, j in enumerate(order, start=1):
            correct = j == truth[i] if error_type == "pair" else gallery_truth[j] == truth[i]
            if correct:
                ranks.append(pos)
                break
    ranks = np.array(ranks)
    r_at = {k: 100.0 * np.mean(ranks <= k) for k in (1, 5, 10)}
    return r_at, float(np.sort(ranks)[(len(ranks) - 1) // 2])


class TestRankMatrix:
    def test_identical_orthonormal(self):
        np.testing.assert_array_equal(rank_matrix(np.eye(3), np.eye(3))[:, 0], [0, 1, 2])

    def test_negated_gallery_ranks_own_last(self):
        Fq = normalize_rows(np.array([[1.0, 0.2], [0.3, 1.0]]))
        ranks = rank_matrix(Fq, -Fq)
        np.testing.assert_array_equal(ranks[:, -1], [0, 1])

    def test_ties_break_to_lower_index(self):
        ranks = rank_matrix(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]))
        np.testing.assert_array_equal(ranks[0], [1, 2, 0])

    def test_matches_sort_oracle(self, rng):
        Fq, Fg = normalize_rows(rng.normal(size=(5, 3))), normalize_rows(rng.normal(size=(5, 3)))
        ranks = rank_matrix(Fq, Fg)
        for i in range(5):
            expected = sorted(range(5), key=lambda j: (-float(Fq[i] @ Fg[j]), j))
            np.testing.assert_array_equal(ranks[i], expected)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            rank_matrix(np.ones((2, 3)), np.ones((2, 4)))


class TestScore:
    def test_perfect_pairing(self):
        report = score(rank_matrix(np.eye(4), np.eye(4)), range(4), "pair")
        assert report.r1 == report.r5 == report.r10 == 100.0
        assert report.median_rank == 1.0

    def test_hand_counted_ranks(self):
        # true item of query i sits at position i
        ranks = np.array([[0, 9, 8, 7], [9, 1, 8, 7], [9, 8, 2, 7], [9, 8, 7, 3]])
        report = score(ranks, [0, 1, 2, 3], "pair")
        np.testing.assert_array_equal(truth_ranks(ranks, [0, 1, 2, 3], "pair"), [1, 2, 3, 4])
        assert report.r1 == 25.0
        assert report.r5 == 100.0
        assert report.median_rank == 2.0
        assert report.n_queries == 4

    def test_class_mode_counts_same_class_neighbours(self):
        # query 0 (class 1): gallery item 3 (class 1) first, its own pair 0 at position 7
        ranks = np.array([[3, 1, 2, 4, 5, 6, 0, 7]])
        gallery_classes = np.array([1, 0, 0, 1, 2, 2, 2, 2])
        pair = score(ranks, [0], "pair")
        klass = score(ranks, [1], "class", gallery_truth=gallery_classes)
        assert pair.r1 == 0.0 and pair.median_rank == 7.0
        assert klass.r1 == 100.0

    def test_errors(self):
        ranks = np.array([[0, 1], [1, 0]])
        with pytest.raises(ContractError):
            score(ranks, [0, 1], "exact")
        with pytest.raises(ContractError):
            score(ranks, [0, 1], "pair", direction="sideways")
        with pytest.raises(ContractError):
            score(ranks, [0], "pair")
        with pytest.raises(ContractError):
            score(ranks, [5, 5], "class", gallery_truth=[0, 1])


@pytest.mark.parametrize("seed", range(10))
def test_metrics_match_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    Fa, Fb = normalize_rows(rng.normal(size=(50, 4))), normalize_rows(rng.normal(size=(50, 4)))
    labels = rng.integers(0, 5, size=50)
    for error_type in ("pair", "class"):
        report = evaluate_embeddings(Fa, Fb, error_type, "a2b", labels)
        truth = np.arange(50) if error_type == "pair" else labels
        r_at, medr = _oracle(Fa, Fb, truth, labels, error_type)
        assert report.r_at == r_at
        assert report.median_rank == medr
        assert 0 <= report.r1 <= report.r5 <= report.r10 <= 100
    pair = evaluate_embeddings(Fa, Fb, "pair", "a2b")
    klass = evaluate_embeddings(Fa, Fb, "class", "a2b", labels)
    for k in (1, 5, 10):
        assert klass.r_at[k] >= pair.r_at[k]


def test_rotation_invariance(rng):
    Fa, Fb = normalize_rows(rng.normal(size=(30, 5))), normalize_rows(rng.normal(size=(30, 5)))
    rotation, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    np.testing.assert_array_equal(rank_matrix(Fa, Fb), rank_matrix(Fa @ rotation, Fb @ rotation))


def test_random_embeddings_hit_chance_level():
    rng = np.random.default_rng(0)
    hits = []
    for _ in range(200):
        Fa, Fb = normalize_rows(rng.normal(size=(100, 8))), normalize_rows(rng.normal(size=(100, 8)))
        hits.append(evaluate_embeddings(Fa, Fb, "pair").r1)
    # every trial averages 100 Bernoulli(1/100) queries
    standard_error = 100 * np.sqrt(0.01 * 0.99 / (100 * 200))
    assert abs(np.mean(hits) - 1.0) < 3 * standard_error


def test_class_mode_needs_labels(rng):
    F = normalize_rows(rng.normal(size=(4, 3)))
    with pytest.raises(ContractError):
        evaluate_embeddings(F, F, "class")


def test_direction_swaps_query_and_gallery(rng):
    Fa, Fb = normalize_rows(rng.normal(size=(20, 3))), normalize_rows(rng.normal(size=(20, 3)))
    assert evaluate_embeddings(Fa, Fb, "pair", "b2a").r_at == evaluate_embeddings(Fb, Fa, "pair", "a2b").r_at


class TestModelEvaluation:
    def test_full_report(self, tiny_dataset, tiny_config):
        model = Model.init(tiny_config, tiny_dataset.dim_a, tiny_dataset.dim_b)
        reports = full_report(model, tiny_dataset)
        assert [(r.direction, r.error_type) for r in reports] == [
            ("a2b", "pair"),
            ("a2b", "class"),
            ("b2a", "pair"),
            ("b2a", "class"),
        ]
        assert all(r.n_queries == 40 for r in reports)
        assert reports[1].r1 >= reports[0].r1 and reports[3].r1 >= reports[2].r1
        frame = reports_frame(reports)
        assert list(frame.columns) == ["direction", "error_type", "r1", "r5", "r10", "median_rank", "n_queries"]

    def test_repeatable(self, tiny_dataset, tiny_config):
        model = Model.init(tiny_config, tiny_dataset.dim_a, tiny_dataset.dim_b)
        assert evaluate_model(model, tiny_dataset, "val") == evaluate_model(model, tiny_dataset, "val")

    def test_dimension_mismatch_names_both_shapes(self, tiny_dataset, tiny_config):
        model = Model.init(tiny_config, 50, 100)
        with pytest.raises(DimensionError, match=r"\(100, 100\).*\(50, 100\)"):
            evaluate_model(model, tiny_dataset)
