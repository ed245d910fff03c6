import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annoclear.annotations import AnnotationTable, NoduleRecord, ReviewRecord
from annoclear.nodule_scoring import (
    KernelSpec,
    NoduleScoringConfig,
    attach_confidences,
    kernel_eval,
    read_nodule_scores,
    score_nodules,
    write_nodule_scores,
)

K20 = KernelSpec("epanechnikov", 20.0)


def nod(img, ann, center, r=3.0):
    return NoduleRecord(img, ann, center, (r, r, r))


class TestKernel:
    def test_peak(self):
        assert kernel_eval(K20, 0.0) == 1.0

    @pytest.mark.parametrize("r", [20.0, 20.5, 1e6])
    def test_support(self, r):
        assert kernel_eval(K20, r) == 0.0

    def test_half_bandwidth(self):
        assert kernel_eval(K20, 10.0) == 0.75

    @given(st.floats(0, 100), st.floats(0, 100))
    def test_monotone(self, r1, r2):
        lo, hi = sorted((r1, r2))
        assert kernel_eval(K20, lo) >= kernel_eval(K20, hi)

    def test_invalid(self):
        with pytest.raises(ValueError):
            KernelSpec("gaussian", 1.0)
        with pytest.raises(ValueError):
            KernelSpec("epanechnikov", 0.0)


def confidences(table, scores, **kwargs):
    return {(c.nodule.annotator_id, c.nodule.center): c.confidence
            for c in score_nodules(table, scores, NoduleScoringConfig(**kwargs))}


def test_isolated_nodule():
    t = AnnotationTable([nod("i", "a", (0, 0, 0)), nod("i", "b", (100, 0, 0))])
    conf = confidences(t, {"a": 0.9, "b": 0.5}, alpha=0.7, kernel=K20)
    assert conf[("a", (0.0, 0.0, 0.0))] == pytest.approx(0.63, abs=1e-12)


def test_full_agreement():
    t = AnnotationTable([nod("i", a, (1, 2, 3)) for a in "abcd"])
    conf = confidences(t, {a: 1.0 for a in "abcd"}, alpha=0.7, kernel=K20)
    assert all(v == pytest.approx(1.0, abs=1e-12) for v in conf.values())


def test_half_bandwidth_neighbor():
    t = AnnotationTable([nod("i", "a", (0, 0, 0)), nod("i", "b", (0, 10, 0))])
    conf = confidences(t, {"a": 0.8, "b": 0.6}, alpha=0.7, kernel=K20)
    expected = 0.7 * 0.8 + 0.3 * (1 - 0.5 ** 2) * 0.6 / 1
    assert conf[("a", (0.0, 0.0, 0.0))] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.695, abs=1e-12)


def test_reviewers_count_in_normalization():
    t = AnnotationTable([nod("i", "a", (0, 0, 0)), nod("i", "b", (0, 0, 0))], [ReviewRecord("i", "c")])
    conf = confidences(t, {"a": 1.0, "b": 1.0, "c": 1.0}, alpha=0.5, kernel=K20)
    assert conf[("a", (0.0, 0.0, 0.0))] == pytest.approx(0.5 + 0.5 * 1.0 / 2)


def test_own_nodules_excluded_and_nearest_only():
    t = AnnotationTable([nod("i", "a", (0, 0, 0)), nod("i", "a", (0, 0, 1)),
                         nod("i", "b", (0, 0, 5)), nod("i", "b", (0, 0, 10))])
    conf = confidences(t, {"a": 0.5, "b": 1.0}, alpha=0.7, kernel=K20)
    # a's two coincident-ish nodules do not support each other; only b's nearest counts
    assert conf[("a", (0.0, 0.0, 0.0))] == pytest.approx(0.35 + 0.3 * (1 - (5 / 20) ** 2))
    raw = confidences(t, {"a": 0.5, "b": 1.0}, alpha=0.7, kernel=K20, raw_sum=True)
    assert raw[("a", (0.0, 0.0, 0.0))] == pytest.approx(0.35 + 0.3 * ((1 - 0.25 ** 2) + (1 - 0.5 ** 2)))


def test_alpha_one():
    t = AnnotationTable([nod("i", "a", (0, 0, 0)), nod("i", "b", (0, 0, 1))])
    conf = confidences(t, {"a": 0.37, "b": 1.0}, alpha=1.0, kernel=K20)
    assert conf[("a", (0.0, 0.0, 0.0))] == 0.37


def test_missing_score():
    t = AnnotationTable([nod("i", "a", (0, 0, 0))])
    with pytest.raises(KeyError):
        score_nodules(t, {"b": 1.0})


def test_csv_round_trip(tmp_path):
    t = AnnotationTable([nod("i", "a", (0, 0, 0)), nod("i", "b", (0, 3, 0)), nod("j", "a", (5, 5, 5))],
                        [ReviewRecord("j", "b")])
    scored = score_nodules(t, {"a": 0.5, "b": 0.8})
    path = tmp_path / "ns.csv"
    write_nodule_scores(scored, path)
    assert path.read_text().splitlines()[0] == "image_id,annotator_id,z_mm,y_mm,x_mm,confidence"
    back = attach_confidences(t, read_nodule_scores(path))
    assert {(c.nodule, c.confidence) for c in back} == {(c.nodule, c.confidence) for c in scored}


score = st.floats(0, 1)
pos = st.tuples(*[st.floats(-30, 30)] * 3)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcd"), pos), min_size=1, max_size=8),
       st.dictionaries(st.sampled_from("abcd"), score, min_size=4, max_size=4),
       st.sampled_from("abcd"), st.floats(0, 0.5), st.floats(0, 1))
def test_bounds_and_monotonicity(marks, scores, bumped, delta, alpha):
    t = AnnotationTable([nod("i", a, c) for a, c in marks])
    cfg = dict(alpha=alpha, kernel=K20)
    base = score_nodules(t, scores, NoduleScoringConfig(**cfg))
    higher = dict(scores)
    higher[bumped] = min(1.0, scores[bumped] + delta)
    raised = score_nodules(t, higher, NoduleScoringConfig(**cfg))
    for b, r in zip(base, raised):
        assert -1e-12 <= b.confidence <= 1.0 + 1e-12
        assert r.confidence >= b.confidence - 1e-12


@settings(max_examples=60, deadline=None)
@given(pos, st.floats(0, 40), st.floats(0, 40), score, score)
def test_farther_neighbor_never_helps(center, d1, d2, s_a, s_b):
    near, far = sorted((d1, d2))
    results = []
    for d in (near, far):
        t = AnnotationTable([nod("i", "a", center), nod("i", "b", (center[0] + d, center[1], center[2]))])
        results.append(confidences(t, {"a": s_a, "b": s_b}, kernel=K20)[("a", nod("i", "a", center).center)])
    assert results[0] >= results[1]
