import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annoclear.annotations import AnnotationTable, NoduleRecord, ReviewRecord
from annoclear.annotator_scoring import (
    Consilium,
    ImageOverlaps,
    RasterConfig,
    ScoreState,
    ScoringConfig,
    consilium_dice,
    enumerate_consiliums,
    read_score_history,
    score_annotators,
    score_iteration,
    write_score_history,
)
from oracles import brute_score_iteration


def make_table(images: dict) -> AnnotationTable:
    """images: image -> annotator -> list of (center, radii); empty list means review row."""
    nodules, reviews = [], []
    for img, anns in images.items():
        for ann, nods in anns.items():
            if not nods:
                reviews.append(ReviewRecord(img, ann))
            for c, r in nods:
                nodules.append(NoduleRecord(img, ann, c, r))
    return AnnotationTable(nodules, reviews)


A = ((10.3, 10.2, 9.8), (4.0, 4.0, 4.0))
C = ((25.1, 24.7, 25.3), (3.0, 3.0, 3.0))
# voxel counts of A and C from brute-force counting on a 36^3 unit grid
A_VOXELS, C_VOXELS = 268, 116


class TestEnumerate:
    def test_one_pair(self):
        t = make_table({"img": {"a": [A], "b": [A], "c": []}})
        assert enumerate_consiliums(t, "a") == [Consilium("img", "a", ("b", "c"))]

    def test_four_annotators(self):
        t = make_table({"img": {x: [A] for x in "abcd"}})
        pairs = [c.pair for c in enumerate_consiliums(t, "a")]
        assert pairs == [("b", "c"), ("b", "d"), ("c", "d")]

    def test_too_few(self):
        t = make_table({"i1": {"a": [A], "b": [A]}, "i2": {"a": [], "c": [C]}})
        assert enumerate_consiliums(t, "a") == []

    def test_ordering_across_images(self):
        t = make_table({"z": {x: [A] for x in "abc"}, "m": {x: [A] for x in "abc"}})
        assert [c.image_id for c in enumerate_consiliums(t, "b")] == ["m", "z"]

    def test_subject_in_pair_rejected(self):
        with pytest.raises(ValueError):
            Consilium("i", "a", ("a", "b"))


class TestConsiliumDice:
    def test_identical(self):
        t = make_table({"img": {x: [A] for x in "abc"}})
        assert consilium_dice(t, Consilium("img", "a", ("b", "c")), {x: 0.5 for x in "abc"}) == 1.0

    def test_empty_subject(self):
        t = make_table({"img": {"a": [], "b": [A], "c": [C]}})
        assert consilium_dice(t, Consilium("img", "a", ("b", "c")), {x: 0.5 for x in "abc"}) == 0.0

    def test_all_empty(self):
        t = make_table({"img": {"a": [], "b": [], "c": []}})
        assert consilium_dice(t, Consilium("img", "a", ("b", "c")), {x: 0.5 for x in "abc"}) == 1.0

    def test_equal_scores_is_unweighted(self):
        t = make_table({"img": {"a": [A], "b": [A], "c": [C]}})
        c = Consilium("img", "a", ("b", "c"))
        for s in (0.1, 0.5, 0.9):
            assert consilium_dice(t, c, {"a": 0.3, "b": s, "c": s}) == pytest.approx(
                A_VOXELS / (1.5 * A_VOXELS + 0.5 * C_VOXELS), abs=1e-12)

    def test_zero_scores_fallback(self):
        t = make_table({"img": {"a": [A], "b": [A], "c": [C]}})
        with pytest.warns(RuntimeWarning):
            d = consilium_dice(t, Consilium("img", "a", ("b", "c")), {"a": 1.0, "b": 0.0, "c": 0.0})
        assert d == pytest.approx(A_VOXELS / (1.5 * A_VOXELS + 0.5 * C_VOXELS), abs=1e-12)

    def test_matches_count_formula(self):
        t = make_table({"img": {"a": [A, C], "b": [A], "c": [((12.0, 11.0, 10.5), (3.5, 4.0, 3.0))]}})
        scores = {"a": 0.2, "b": 0.7, "c": 0.4}
        ov = ImageOverlaps(t, "img")
        for subject, pair in (("a", ("b", "c")), ("b", ("a", "c")), ("c", ("a", "b"))):
            w1 = scores[pair[0]] / (scores[pair[0]] + scores[pair[1]])
            fast = ov.dice(subject, *pair, w1, 1 - w1)
            slow = consilium_dice(t, Consilium("img", subject, pair), scores)
            assert abs(fast - slow) < 1e-12


class TestScoreIteration:
    def test_three_annotators(self):
        t = make_table({"img": {"a": [A], "b": [A], "c": [C]}})
        state = score_iteration(t, ScoreState.initial("abc"))
        expected = 67 / 115  # 268 / (1.5 * 268 + 0.5 * 116)
        assert state.scores["c"] == 0.0
        assert state.scores["a"] == pytest.approx(expected, abs=1e-12)
        assert state.scores["b"] == pytest.approx(expected, abs=1e-12)
        assert state.iteration == 1 and len(state.history) == 2

    def test_all_identical(self):
        t = make_table({"i1": {x: [A] for x in "abcd"}, "i2": {x: [C] for x in "abcd"}})
        state = score_iteration(t, ScoreState.initial("abcd"))
        assert all(v == 1.0 for v in state.scores.values())

    def test_no_consiliums_keeps_score(self):
        t = make_table({"i1": {"a": [A], "b": [A], "c": [A]}, "i2": {"d": [C], "a": [C]}})
        state = score_iteration(t, ScoreState({"a": 0.5, "b": 0.5, "c": 0.5, "d": 0.25}))
        assert state.scores["d"] == 0.25

    def test_missing_score(self):
        t = make_table({"img": {"a": [A], "b": [A], "c": [C]}})
        with pytest.raises(KeyError):
            score_iteration(t, ScoreState({"a": 0.5, "b": 0.5}))

    def test_matches_brute_force_two_steps(self):
        images = {
            "i1": {"a": [A], "b": [((10.8, 10.0, 9.5), (3.5, 3.5, 3.5))], "c": [C], "d": []},
            "i2": {"a": [C, ((6.2, 30.1, 8.8), (2.5, 2.5, 2.5))], "b": [C], "c": [], "d": [((24.0, 25.5, 26.0), (4.0, 4.0, 4.0))]},
        }
        t = make_table(images)
        state = ScoreState.initial("abcd")
        ref = dict(state.scores)
        for _ in range(2):
            state = score_iteration(t, state)
            ref = brute_score_iteration(images, ref, (0.0, 0.0, 0.0), (36, 36, 36))
            for k in ref:
                assert abs(state.scores[k] - ref[k]) < 1e-12


class TestScoreAnnotators:
    table = make_table({
        "i1": {"a": [A], "b": [A], "c": [C], "d": [A]},
        "i2": {"a": [C], "b": [C], "c": [A], "d": []},
    })

    def test_single_iteration_is_simplified_algorithm(self):
        state = score_annotators(self.table, ScoringConfig(iterations=1))
        assert state.iteration == 1
        one = score_iteration(self.table, ScoreState.initial("abcd"))
        assert state.scores == one.scores

    def test_uniform_start_value_irrelevant(self):
        a = score_annotators(self.table, ScoringConfig(iterations=1), initial={x: 0.5 for x in "abcd"})
        b = score_annotators(self.table, ScoringConfig(iterations=1), initial={x: 0.9 for x in "abcd"})
        assert a.scores == b.scores

    def test_fixed_point_stops(self):
        t = make_table({"i1": {x: [A] for x in "abc"}})
        state = score_annotators(t, ScoringConfig(iterations=10), initial={x: 1.0 for x in "abc"})
        assert state.iteration == 1

    def test_tol_zero_runs_all(self):
        state = score_annotators(self.table, ScoringConfig(iterations=4, tol=0.0))
        assert state.iteration == 4 and len(state.history) == 5

    def test_deterministic_and_threads(self):
        a = score_annotators(self.table, ScoringConfig(iterations=3, tol=0))
        b = score_annotators(self.table, ScoringConfig(iterations=3, tol=0, threads=4))
        assert a.history == b.history

    def test_history_round_trip(self, tmp_path):
        state = score_annotators(self.table, ScoringConfig(iterations=3, tol=0))
        path = tmp_path / "h.csv"
        write_score_history(state, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,annotator_id,score"
        assert len(lines) == 1 + 4 * 4
        back = read_score_history(path)
        assert back.history == state.history and back.iteration == 3


def test_majority_beats_outlier():
    t = make_table({
        "i1": {"a": [A], "b": [A], "c": [A], "x": [C]},
        "i2": {"a": [C], "b": [C], "c": [C], "x": [A]},
    })
    state = score_annotators(t, ScoringConfig(iterations=3, tol=0))
    assert min(state.scores[k] for k in "abc") >= state.scores["x"]


# small random tables on a coarse lattice
sphere = st.tuples(st.tuples(*[st.integers(4, 20).map(lambda v: v + 0.25)] * 3),
                   st.integers(2, 6).map(lambda r: (float(r),) * 3))
annotations = st.dictionaries(st.sampled_from(["i1", "i2"]),
                              st.dictionaries(st.sampled_from("pqrs"), st.lists(sphere, max_size=2),
                                              min_size=1, max_size=4),
                              min_size=1, max_size=2)


@settings(max_examples=40, deadline=None)
@given(annotations, st.permutations("pqrs"))
def test_range_equivariance_determinism(images, perm):
    t = make_table(images)
    cfg = ScoringConfig(iterations=3, tol=0, raster=RasterConfig())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        state = score_annotators(t, cfg)
        again = score_annotators(t, cfg)
        rename = dict(zip("pqrs", perm))
        renamed = make_table({img: {rename[a]: n for a, n in anns.items()} for img, anns in images.items()})
        permuted = score_annotators(renamed, cfg)
    assert state.history == again.history
    for scores in state.history:
        assert all(0.0 <= v <= 1.0 for v in scores.values())
    for k, scores in enumerate(state.history):
        for a, v in scores.items():
            assert permuted.history[k][rename[a]] == v
