import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from mitfusion.features import FeatureRecord, apply_missing_audio_policy
from mitfusion.fusion import (
    EarlyFusionClassifier,
    FeatureClassifier,
    LateFusionClassifier,
    MultiClassifierRouter,
    PlanError,
    Predictions,
    early_fuse,
    late_fuse,
    load_plan,
    parse_plan,
    read_predictions_tsv,
    route_multi_classifier,
    stack_meta_features,
    write_predictions_tsv,
)
from mitfusion.synth import complementary_records


def blobs(seed=0, n=40, gap=4.0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(size=(n, 2)) - gap, rng.normal(size=(n, 2)) + gap])
    return X, np.array(["neg"] * n + ["pos"] * n)


def three_blobs(seed=0, n=30):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 4], [4, -2], [-4, -2]])
    X = np.vstack([rng.normal(size=(n, 2)) + c for c in centers])
    return X, np.repeat(np.array(["a", "b", "c"]), n)


class TestEarlyFuse:
    def test_forced(self):
        r = FeatureRecord("s", "x", {"p": np.array([1.0, 2.0]), "q": np.array([3.0])})
        np.testing.assert_array_equal(early_fuse(r, ["p", "q"]), [1, 2, 3])
        np.testing.assert_array_equal(early_fuse(r, ["q", "p"]), [3, 1, 2])

    def test_zero_filled_audio_keeps_visual_positions(self):
        visual = np.arange(5.0)
        r = FeatureRecord("s", "x", {"spatiotemporal": visual, "audio": None})
        (filled,) = apply_missing_audio_policy([r], "zero_fill", audio_dim=3)
        out = early_fuse(filled, ["spatiotemporal", "audio"])
        np.testing.assert_array_equal(out[:5], visual)
        np.testing.assert_array_equal(out[5:], 0)

    def test_paper_dims(self):
        r = FeatureRecord("s", "x", {"spatiotemporal": np.zeros(2048), "vistext": np.zeros(300)})
        assert early_fuse(r, ["spatiotemporal", "vistext"]).shape == (2348,)

    def test_absent_modality(self):
        r = FeatureRecord("s", "x", {"spatiotemporal": np.zeros(4), "audio": None})
        with pytest.raises(KeyError, match="audio"):
            early_fuse(r, ["spatiotemporal", "audio"])


class TestFeatureClassifier:
    @pytest.mark.parametrize("kind", ["logistic_regression", "linear_hinge", "mlp"])
    def test_separable_blobs(self, kind):
        X, y = blobs()
        clf = FeatureClassifier(kind=kind, epochs=30, hidden_dims=(16, 16)).fit(X, y)
        assert clf.score(X, y) == 1.0

    @pytest.mark.parametrize("kind", ["logistic_regression", "linear_hinge", "mlp"])
    def test_probabilities_are_distributions(self, kind):
        X, y = three_blobs()
        proba = FeatureClassifier(kind=kind, epochs=5, hidden_dims=(8, 8)).fit(X, y).predict_proba(X)
        assert (proba >= 0).all()
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-9)

    @pytest.mark.parametrize("kind", ["logistic_regression", "linear_hinge"])
    def test_label_permutation(self, kind):
        X, y = three_blobs(seed=1)
        base = FeatureClassifier(kind=kind, epochs=10, classes=["a", "b", "c"], random_state=5).fit(X, y)
        perm = FeatureClassifier(kind=kind, epochs=10, classes=["c", "a", "b"], random_state=5).fit(X, y)
        np.testing.assert_allclose(perm.predict_proba(X)[:, [1, 2, 0]], base.predict_proba(X), atol=1e-10)
        np.testing.assert_array_equal(perm.predict(X), base.predict(X))

    def test_deterministic(self):
        X, y = three_blobs()
        a = FeatureClassifier(kind="mlp", epochs=3, hidden_dims=(8, 8), random_state=2).fit(X, y)
        b = clone(a).fit(X, y)
        np.testing.assert_array_equal(a.predict_proba(X), b.predict_proba(X))

    def test_single_class(self):
        X, _ = blobs()
        with pytest.raises(ValueError, match="at least 2 classes"):
            FeatureClassifier().fit(X, ["a"] * len(X))
        with pytest.raises(ValueError, match="single class"):
            FeatureClassifier(classes=["a", "b"]).fit(X, ["a"] * len(X))

    def test_input_validation(self):
        X, y = blobs()
        clf = FeatureClassifier(epochs=1).fit(X, y)
        with pytest.raises(ValueError, match="expected 2 features"):
            clf.predict(np.zeros((1, 3)))
        with pytest.raises(ValueError):
            FeatureClassifier().fit(X, y[:-1])
        with pytest.raises(ValueError, match="kind"):
            FeatureClassifier(kind="forest").fit(X, y)
        with pytest.raises(ValueError, match="outside the class list"):
            FeatureClassifier(classes=["neg", "other"]).fit(X, y)
        with pytest.raises(ValueError):
            FeatureClassifier(kind="mlp", hidden_dims=(4,)).fit(X, y)


def preds(rows, ids=None, classes=("x", "y")):
    rows = np.asarray(rows, dtype=float)
    return Predictions(ids or [f"s{i}" for i in range(len(rows))], rows, list(classes))


class TestLateFuse:
    def test_identity(self):
        p = preds([[0.2, 0.8], [0.6, 0.4]])
        np.testing.assert_allclose(late_fuse([p, p]).proba, p.proba, atol=1e-15)

    def test_forced_average(self):
        out = late_fuse([preds([[0.9, 0.1]]), preds([[0.1, 0.9]])])
        np.testing.assert_allclose(out.proba, [[0.5, 0.5]], atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 4))
    def test_average_modality_order(self, seed, n_sets):
        rng = np.random.default_rng(seed)
        sets = [preds(rng.dirichlet(np.ones(3), size=4), classes="abc") for _ in range(n_sets)]
        a = late_fuse(sets).proba
        b = late_fuse(sets[::-1]).proba
        np.testing.assert_allclose(a, b, atol=1e-15)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)

    def test_misaligned(self):
        with pytest.raises(ValueError, match="aligned"):
            late_fuse([preds([[1, 0]], ["a"]), preds([[1, 0]], ["b"])])
        with pytest.raises(ValueError, match="class lists"):
            late_fuse([preds([[1, 0]]), preds([[1, 0]], classes=("y", "x"))])
        with pytest.raises(ValueError, match="meta"):
            late_fuse([preds([[1, 0]])], mode="stacked_lr")
        with pytest.raises(ValueError, match="mode"):
            late_fuse([preds([[1, 0]])], mode="vote")

    def test_meta_features(self):
        p = np.array([[0.0, 1.0]])
        np.testing.assert_allclose(stack_meta_features([p, p], "proba"), [[0, 1, 0, 1]])
        logp = stack_meta_features([p], "log_proba")
        assert np.isfinite(logp).all() and logp[0, 1] == 0.0


@pytest.fixture(scope="module")
def data():
    records, classes = complementary_records(seed=0)
    train = [r for r in records if r.split == "train"]
    val = [r for r in records if r.split == "val"]
    return train, val, classes


class TestLateFusionClassifier:
    def test_stacked_beats_single_modalities(self, data):
        train, val, classes = data
        single = [EarlyFusionClassifier((m,), FeatureClassifier(epochs=30)).fit(train).score(val) for m in "AB"]
        fused = LateFusionClassifier(("A", "B"), FeatureClassifier(epochs=30)).fit(train).score(val)
        assert fused >= max(single)
        assert max(single) < 0.8 < fused

    def test_average_mode(self, data):
        train, val, _ = data
        model = LateFusionClassifier(("A", "B"), FeatureClassifier(epochs=30), mode="average").fit(train)
        avg = late_fuse(model.modality_predictions(val)).proba
        np.testing.assert_allclose(model.predict_proba(val), avg, atol=1e-15)
        assert model.meta_ is None

    def test_bad_mode(self, data):
        with pytest.raises(ValueError, match="mode"):
            LateFusionClassifier(("A",), mode="vote").fit(data[0])

    def test_class_list_respected(self, data):
        train, val, _ = data
        model = LateFusionClassifier(("A", "B"), FeatureClassifier(epochs=2), classes=["c3", "c2", "c1", "c0"]).fit(train)
        assert model.predictions(val).classes == ["c3", "c2", "c1", "c0"]


class Fixed:
    """Stub classifier: returns one fixed probability row for every record."""

    def __init__(self, row, forbid=False):
        self.row = np.asarray(row, dtype=float)
        self.forbid = forbid
        self.seen = []

    def predict_proba(self, records):
        if self.forbid:
            raise AssertionError("this classifier must not be consulted")
        self.seen.extend(records)
        return np.tile(self.row, (len(records), 1))


def audio_record(has_audio, audio=None):
    feats = {"spatiotemporal": np.ones(3), "audio": audio if has_audio else None}
    return FeatureRecord("s0", "x", feats)


class TestRouting:
    def test_no_audio_goes_without(self):
        out = route_multi_classifier(Fixed([0.99, 0.01], forbid=True), Fixed([0.6, 0.4]), audio_record(False))
        assert out.source == "without_audio"
        np.testing.assert_array_equal(out.proba, [0.6, 0.4])

    def test_larger_max_wins(self):
        rec = audio_record(True, np.ones(2))
        out = route_multi_classifier(Fixed([0.9, 0.1]), Fixed([0.2, 0.8]), rec)
        assert out.source == "with_audio" and out.proba[0] == 0.9
        out = route_multi_classifier(Fixed([0.2, 0.8]), Fixed([0.1, 0.9]), rec)
        assert out.source == "without_audio" and out.proba[1] == 0.9

    def test_tie_goes_to_with_audio(self):
        out = route_multi_classifier(Fixed([0.7, 0.3]), Fixed([0.3, 0.7]), audio_record(True, np.ones(2)))
        assert out.source == "with_audio"
        np.testing.assert_array_equal(out.proba, [0.7, 0.3])

    def test_flag_false_audio_never_read(self):
        rec = FeatureRecord("s1", "x", {"spatiotemporal": np.ones(3), "audio": None})
        (filled,) = apply_missing_audio_policy([rec], "zero_fill", audio_dim=2)
        filled.features["audio"][:] = np.nan
        out = route_multi_classifier(Fixed([1.0, 0.0], forbid=True), Fixed([0.5, 0.5]), filled)
        assert out.source == "without_audio"


def routed_records(seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(80):
        label = ["p", "q"][i % 2]
        sign = 1 if label == "p" else -1
        has_audio = i % 5 != 0
        feats = {
            "v": rng.normal(size=2) + sign,
            "t": rng.normal(size=2),
            "audio": rng.normal(size=2) + 3 * sign if has_audio else None,
        }
        records.append(FeatureRecord(f"r{i:02d}", label, feats))
    return apply_missing_audio_policy(records, "zero_fill")


class TestRouter:
    def make(self, mods=("v", "t", "audio"), without=("v", "t")):
        base = FeatureClassifier(epochs=20)
        return MultiClassifierRouter(EarlyFusionClassifier(mods, base), EarlyFusionClassifier(without, base))

    def test_sources_and_training_sets(self):
        records = routed_records()
        router = self.make().fit(records)
        out = router.predictions(records)
        for rec, src in zip(records, out.sources):
            if not rec.has_audio:
                assert src == "without_audio"
        assert set(out.sources) == {"with_audio", "without_audio"}
        np.testing.assert_allclose(out.proba.sum(axis=1), 1.0, atol=1e-9)
        # the with-audio model never saw zero-filled rows: refitting on audio rows alone matches it
        ref = clone(router.with_audio).set_params(classes=["p", "q"]).fit([r for r in records if r.has_audio])
        np.testing.assert_array_equal(ref.predict_proba(records[:5]), router.with_audio_.predict_proba(records[:5]))

    def test_spec_checked(self):
        with pytest.raises(ValueError, match="3 modalities"):
            self.make(mods=("v", "t")).fit(routed_records())
        with pytest.raises(ValueError, match="2 non-audio"):
            self.make(without=("v", "audio")).fit(routed_records())
        with pytest.raises(ValueError, match="both"):
            MultiClassifierRouter().fit(routed_records())


class TestPlans:
    def test_parse(self):
        plan = parse_plan("# the best configuration\nstrategy = multi_classifier_route\nepochs=5  # short\n")
        assert plan.strategy == "multi_classifier_route"
        assert plan.epochs == 5
        assert plan.modalities == ("spatiotemporal", "vistext", "audio")
        assert plan.name() == "spatiotemporal + vistext + audio (late, multi-route)"

    @pytest.mark.parametrize(
        "text, name",
        [
            ("strategy=early_concat\nmodalities=spatiotemporal,vistext", "spatiotemporal + vistext (early, lr)"),
            ("strategy=late_stacked_lr", "spatiotemporal + vistext + audio (late, lr, zero-fill)"),
            ("strategy=late_stacked_lr\nmissing_audio=drop", "spatiotemporal + vistext + audio (late, lr, audio only)"),
            ("strategy=late_average\nmodalities=spatiotemporal,vistext\nclassifier=linear_hinge", "spatiotemporal + vistext (late, svm, average)"),
            ("strategy=early_concat\nmodalities=spatiotemporal,vistext\nclassifier=mlp", "spatiotemporal + vistext (early, mlp)"),
        ],
    )
    def test_names(self, text, name):
        assert parse_plan(text).name() == name

    @pytest.mark.parametrize(
        "text, match",
        [
            ("strategy=stacked_forest", "unknown strategy"),
            ("modalities=a", "strategy"),
            ("strategy=early_concat\ncolour=blue", "unknown plan keys"),
            ("strategy=early_concat\nepochs=many", "bad plan value"),
            ("strategy", "key=value"),
            ("strategy=multi_classifier_route\nmodalities=a,b", "exactly 3"),
            ("strategy=early_concat\nclassifier=forest", "classifier"),
        ],
    )
    def test_errors(self, text, match):
        with pytest.raises(PlanError, match=match):
            parse_plan(text)

    def test_build(self, tmp_path):
        (tmp_path / "p.cfg").write_text("strategy=multi_classifier_route\nepochs=7\n")
        model = load_plan(tmp_path / "p.cfg").build(random_state=3)
        assert isinstance(model, MultiClassifierRouter)
        assert model.with_audio.get_params()["modalities"] == ("spatiotemporal", "vistext", "audio")
        assert model.without_audio.get_params()["modalities"] == ("spatiotemporal", "vistext")
        assert model.with_audio.estimator.epochs == 7


def test_predictions_tsv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    p = Predictions(["a", "b", "c"], rng.dirichlet(np.ones(4), size=3), ["w", "x", "y", "z"])
    write_predictions_tsv(tmp_path / "p.tsv", p)
    back = read_predictions_tsv(tmp_path / "p.tsv")
    assert back.sample_ids == p.sample_ids and back.classes == p.classes
    np.testing.assert_allclose(back.proba, p.proba, atol=5e-10)
    assert (tmp_path / "p.tsv").read_text().splitlines()[0] == "sample_id\tw\tx\ty\tz"
    with pytest.raises(ValueError):
        Predictions(["a"], np.ones((1, 3)), ["x", "y"])
