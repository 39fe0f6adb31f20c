import numpy as np
import pytest

from mitfusion.embeddings import cosine, load_embeddings
from mitfusion.features import load_manifest
from mitfusion.synth import (
    PAPER_CLASSES,
    band_energy_logmels,
    class_embeddings,
    class_names,
    complementary_records,
    make_fusion_records,
    vistext_toy,
    write_synthetic_dataset,
)


def test_counts_and_coverage():
    records, classes = make_fusion_records(n_classes=20, samples_per_class=50, audio_coverage=0.6)
    assert len(records) == 1000
    assert sum(r.has_audio for r in records) == 600
    assert classes == list(PAPER_CLASSES)
    by_split = {s: [r for r in records if r.split == s] for s in ("train", "val", "test")}
    assert [len(v) for v in by_split.values()] == [600, 200, 200]
    for split in by_split.values():
        assert sum(r.has_audio for r in split) == 0.6 * len(split)


def test_audio_absent_is_none():
    records, _ = make_fusion_records(samples_per_class=5, audio_coverage=0.0)
    assert all(r.features["audio"] is None and not r.has_audio for r in records)


def test_deterministic_and_seeded():
    a, _ = make_fusion_records(samples_per_class=5, seed=3)
    b, _ = make_fusion_records(samples_per_class=5, seed=3)
    c, _ = make_fusion_records(samples_per_class=5, seed=4)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.get("spatiotemporal"), y.get("spatiotemporal"))
    assert not np.array_equal(a[0].get("spatiotemporal"), c[0].get("spatiotemporal"))


def test_bad_arguments():
    with pytest.raises(ValueError, match="even"):
        make_fusion_records(n_classes=3)
    with pytest.raises(ValueError, match="coverage"):
        make_fusion_records(audio_coverage=1.5)
    with pytest.raises(ValueError, match="5 samples"):
        make_fusion_records(samples_per_class=2)


def test_files_bit_identical(tmp_path):
    kw = dict(samples_per_class=6, confusable_pairs=1, seed=9)
    m1 = write_synthetic_dataset(tmp_path / "a", **kw)
    m2 = write_synthetic_dataset(tmp_path / "b", **kw)
    files = sorted(p.relative_to(m1.parent) for p in m1.parent.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(m2.parent) for p in m2.parent.rglob("*") if p.is_file())
    for rel in files:
        assert (m1.parent / rel).read_bytes() == (m2.parent / rel).read_bytes(), rel


def test_written_dataset_loads(tmp_path):
    manifest = write_synthetic_dataset(tmp_path / "d", samples_per_class=7, audio_coverage=0.56)
    m = load_manifest(manifest)
    assert m.audio_coverage("train") == 0.56
    assert len(m.split("train")) == 100
    table = load_embeddings(tmp_path / "d" / "embeddings.txt")
    assert table.words == m.classes and table.dim == 300


def test_collision(tmp_path):
    write_synthetic_dataset(tmp_path / "d", samples_per_class=5)
    with pytest.raises(FileExistsError, match="force"):
        write_synthetic_dataset(tmp_path / "d", samples_per_class=5)
    write_synthetic_dataset(tmp_path / "d", samples_per_class=5, seed=1, force=True)


class TestClassEmbeddings:
    def test_orthonormal(self):
        table = class_embeddings(class_names(20), rng=np.random.default_rng(0))
        gram = table.vectors @ table.vectors.T
        np.testing.assert_allclose(gram, np.eye(20), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_confusable_cosine(self, seed):
        table = class_embeddings(class_names(20), confusable_pairs=3, rng=np.random.default_rng(seed))
        for p in range(3):
            assert abs(cosine(table.vectors[2 * p], table.vectors[2 * p + 1]) - 0.8) <= 0.01
        # twins stay orthogonal to everything else
        assert abs(cosine(table.vectors[1], table.vectors[2])) < 1e-12
        assert abs(cosine(table.vectors[6], table.vectors[7])) < 1e-12

    def test_limits(self):
        with pytest.raises(ValueError):
            class_embeddings(class_names(4), confusable_pairs=3)
        with pytest.raises(ValueError):
            class_embeddings(class_names(20), dim=10)


def test_class_names_beyond_twenty():
    assert class_names(22)[21] == "class021"


def test_vistext_toy_shapes():
    X_train, y_train, X_test, y_test, table = vistext_toy(n_train=40, n_test=8)
    # counts are per class
    assert X_train.shape == (160, 64) and X_test.shape == (32, 64)
    assert set(y_train) == set(table.words)


def test_band_energy_toy():
    data = band_energy_logmels(n_per_class=3, n_mels=16)
    assert len(data) == 6
    for mel, label in data:
        low, high = mel[:, :8].mean(), mel[:, 8:].mean()
        assert (low > high) == (label == 0)


def test_complementary_structure():
    records, classes = complementary_records(n_per_class=10)
    assert classes == ["c0", "c1", "c2", "c3"]
    a_means = [np.mean([r.get("A")[:2] for r in records if r.label == c], axis=0) for c in classes]
    # classes 2 and 3 are indistinguishable in modality A
    assert np.linalg.norm(a_means[2] - a_means[3]) < 1.0 < np.linalg.norm(a_means[0] - a_means[1])
