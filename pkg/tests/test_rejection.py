import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from archverify.data import ManifestRecord
from archverify.errors import ConfigError, ContractError, InsufficientDataError, UndefinedMetricError
from archverify.model import build_model
from archverify.rejection import (
    Centroid,
    CentroidSet,
    ClassificationResult,
    classify_with_rejection,
    compute_centroids,
    decide_with_rejection,
    nearest_to_mean,
    rejection_roc,
    rejection_roc_from_results,
)
from oracles import mann_whitney_brute

score_maps = st.dictionaries(st.sampled_from(list("abcdef")), st.floats(0, 1), min_size=1, max_size=6)


def rec(arch, i):
    return ManifestRecord(f"/v/{arch}/{i}.png", arch, "toy", arch)


def stub_centroids(archs):
    return CentroidSet({a: Centroid(a, f"/v/{a}/0.png", np.zeros(4, np.float32)) for a in archs})


def test_nearest_to_mean_collinear_points():
    pts = np.array([[0.0, 0], [1.0, 0], [2.0, 0]])
    assert nearest_to_mean(pts) == 1


@given(st.integers(1, 20), st.integers(0, 2**31))
@settings(max_examples=30)
def test_nearest_to_mean_brute_force(n, seed):
    v = np.random.default_rng(seed).normal(size=(n, 5))
    mean = v.mean(axis=0)
    dists = np.array([np.linalg.norm(x - mean) for x in v])
    # with two rows (or symmetric clouds) the true distances tie and rounding picks a side
    assert dists[nearest_to_mean(v)] <= dists.min() * (1 + 1e-12)


def test_compute_centroids_with_stub_embeddings():
    emb = {rec("a", i).path: np.array([float(i), 0.0, 0.0]) for i in range(3)}
    emb[rec("b", 0).path] = np.array([0.0, 5.0, 0.0])
    splits = {"a": [rec("a", i) for i in range(3)], "b": [rec("b", 0)]}
    cs = compute_centroids(None, splits, embed_fn=lambda r: emb[r.path], normalize=False)
    assert len(cs) == 2
    assert cs.entries["a"].path == rec("a", 1).path  # middle of three collinear points
    assert cs.entries["b"].path == rec("b", 0).path  # a single image represents itself
    mean_cs = compute_centroids(None, splits, use_mean_embedding=True, embed_fn=lambda r: emb[r.path],
                                normalize=False)
    assert mean_cs.entries["a"].path is None
    np.testing.assert_allclose(mean_cs.entries["a"].embedding, [1.0, 0.0, 0.0])


def test_compute_centroids_empty_split_names_architecture():
    with pytest.raises(InsufficientDataError, match="'b'"):
        compute_centroids(None, {"a": [rec("a", 0)], "b": []}, embed_fn=lambda r: np.ones(3))


def test_representative_is_a_validation_image(tmp_path, probe_images):
    from archverify.imaging import save_image

    model = build_model("toy-cnn", 32, seed=0)
    splits = {}
    for i, im in enumerate(probe_images):
        arch = "a" if i % 2 else "b"
        p = tmp_path / f"{i}.png"
        save_image(im[::2, ::2].copy(), p)
        splits.setdefault(arch, []).append(ManifestRecord(str(p), arch, "toy", arch))
    cs = compute_centroids(model, splits, checkpoint_hash="h")
    for arch, c in cs.entries.items():
        assert c.path in {r.path for r in splits[arch]}
        assert c.embedding.shape == (512,)
    res = classify_with_rejection(model, splits["a"][0].path, cs, 1.0, in_set=["a", "b"])
    assert res.accepted and set(res.all_scores) == {"a", "b"}


def test_decision_examples():
    r = decide_with_rejection({"A": 0.1, "B": 0.6}, 0.3)
    assert r.accepted and r.architecture == "A" and r.outcome == "accepted(A)" and r.best_score == 0.1
    assert not decide_with_rejection({"A": 0.1, "B": 0.6}, 0.0).accepted
    assert decide_with_rejection({"A": 0.99, "B": 0.999}, 1.0).accepted


def test_argmin_ties_go_to_smallest_label():
    assert decide_with_rejection({"zeta": 0.2, "alpha": 0.2, "mid": 0.5}, 0.5).architecture == "alpha"


@given(score_maps, st.floats(0, 1))
def test_acceptance_matches_rule(scores, t):
    r = decide_with_rejection(scores, t)
    assert r.architecture == min(scores, key=lambda k: (scores[k], k))
    assert r.accepted == (r.best_score < t)


@given(score_maps)
def test_degenerate_thresholds(scores):
    assert not decide_with_rejection(scores, 0.0).accepted
    r = decide_with_rejection(scores, 1.0)
    assert r.accepted == (min(scores.values()) < 1.0)


@given(st.dictionaries(st.sampled_from(list("abcdef")), st.integers(0, 1000).map(lambda k: k / 1000), min_size=1))
def test_argmin_invariant_under_increasing_transform(scores):
    squashed = {k: v ** 3 / 2 for k, v in scores.items()}
    a = decide_with_rejection(scores, 1.0).architecture
    assert decide_with_rejection(squashed, 1.0).architecture == a


@given(st.lists(score_maps, min_size=1, max_size=20))
@settings(max_examples=50)
def test_threshold_monotonicity(maps):
    ts = np.linspace(0, 1, 101)
    accepted = [{i for i, m in enumerate(maps) if decide_with_rejection(m, t).accepted} for t in ts]
    for lo, hi in zip(accepted, accepted[1:]):
        assert lo <= hi


def test_invalid_threshold_and_missing_centroid():
    with pytest.raises(ContractError):
        decide_with_rejection({"a": 0.1}, 1.5)
    with pytest.raises(ConfigError, match="c"):
        classify_with_rejection(lambda x, c: 0.1, "x", stub_centroids("ab"), 0.5, in_set=["a", "b", "c"])


def test_classify_with_stub_scorer():
    table = {"a": 0.4, "b": 0.05, "c": 0.3}
    r = classify_with_rejection(lambda x, c: table[c.architecture], "x", stub_centroids("abc"), 0.1)
    assert r.accepted and r.architecture == "b"


def _results(scores, archs):
    return [ClassificationResult(True, a, s, {a: s}) for s, a in zip(scores, archs)]


def test_rejection_roc_perfect_separation():
    rep = rejection_roc_from_results(_results([0.0] * 5, "aaaaa"), list("aaaaa"), _results([1.0] * 4, "bbbb"))
    assert rep.auc == 1.0 and rep.closed_set_accuracy == 1.0


def test_rejection_roc_matched_distributions():
    rng = np.random.default_rng(0)
    s_in, s_out = rng.random(2000), rng.random(2000)
    rep = rejection_roc_from_results(_results(s_in, ["a"] * 2000), ["a"] * 2000, _results(s_out, ["a"] * 2000))
    # sd of the Mann-Whitney AUC under the null with n=m=2000 is about 0.0065
    assert abs(rep.auc - 0.5) < 0.03


def test_rejection_roc_matches_oracle_and_accuracy_at_threshold():
    s_in = [0.1, 0.2, 0.7, 0.3]
    s_out = [0.6, 0.25, 0.9]
    res_in = _results(s_in, ["a", "b", "a", "a"])
    rep = rejection_roc_from_results(res_in, ["a", "a", "a", "a"], _results(s_out, "ccc"), t=0.5)
    assert rep.auc == mann_whitney_brute([0] * 4 + [1] * 3, s_in + s_out)
    # accepted at t=0.5: scores 0.1 (right), 0.2 (wrong), 0.3 (right)
    assert rep.closed_set_accuracy == pytest.approx(2 / 3)
    assert rejection_roc_from_results(res_in, ["a"] * 4, _results(s_out, "ccc")).closed_set_accuracy == 0.75


def test_rejection_needs_both_populations():
    with pytest.raises(UndefinedMetricError):
        rejection_roc_from_results(_results([0.1], "a"), ["a"], [])
    with pytest.raises(InsufficientDataError):
        rejection_roc(lambda x, c: 0.1, [rec("a", 0)], [], stub_centroids("a"))


def test_rejection_roc_end_to_end_with_stub():
    cs = stub_centroids("ab")

    def scorer(x, c):
        if x.architecture in ("a", "b"):
            return 0.05 if x.architecture == c.architecture else 0.9
        return 0.7

    rep = rejection_roc(scorer, [rec("a", 1), rec("b", 1)], [rec("z", 1), rec("z", 2)], cs)
    assert rep.auc == 1.0 and rep.closed_set_accuracy == 1.0
    assert rep.to_dict()["n_out_of_set"] == 2


def test_centroid_set_round_trip_and_hash_check(tmp_path):
    cs = CentroidSet({"a": Centroid("a", "/v/a/3.png", np.arange(4, dtype=np.float32) / 7)}, "abc123")
    cs.save(tmp_path / "c.json")
    back = CentroidSet.load(tmp_path / "c.json", expected_checkpoint_hash="abc123")
    assert back.entries["a"].path == "/v/a/3.png"
    np.testing.assert_array_equal(back.entries["a"].embedding, cs.entries["a"].embedding)
    with pytest.raises(ConfigError, match="checkpoint"):
        CentroidSet.load(tmp_path / "c.json", expected_checkpoint_hash="other")


def test_roc_points_csv_is_plain_numbers(tmp_path):
    rep = rejection_roc_from_results(_results([0.1, 0.3], "aa"), ["a", "a"], _results([0.2, 0.9], "bb"))
    rep.write_roc_csv(tmp_path / "roc.csv")
    rows = [line.split(",") for line in (tmp_path / "roc.csv").read_text().splitlines()[1:]]
    values = [[float(v) for v in row] for row in rows]
    assert values[0] == [float("inf"), 0.0, 0.0] and values[-1][1:] == [1.0, 1.0]
