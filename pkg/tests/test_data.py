import gzip
import struct

import numpy as np
import pytest
import scipy.sparse as sp

from glmls.data import (
    DataFormatError,
    Dataset,
    SyntheticSpec,
    filter_single_topic,
    load_dataset,
    load_idx,
    load_libsvm,
    log_tf,
    prune_rare_terms,
    save_dataset,
    split_dataset,
    synthesize,
)
from glmls.glm import softmax


def write_idx_pair(tmp_path, images, labels, gz=False):
    """Build IDX image/label files byte by byte."""
    n, rows, cols = images.shape
    img = struct.pack(">IIII", 0x803, n, rows, cols) + images.astype(np.uint8).tobytes()
    lab = struct.pack(">II", 0x801, len(labels)) + labels.astype(np.uint8).tobytes()
    suffix = ".gz" if gz else ""
    ip = tmp_path / f"images-idx3-ubyte{suffix}"
    lp = tmp_path / f"labels-idx1-ubyte{suffix}"
    opener = gzip.open if gz else open
    with opener(ip, "wb") as f:
        f.write(img)
    with opener(lp, "wb") as f:
        f.write(lab)
    return str(ip), str(lp)


class TestIdx:
    def test_round_trip(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(5, 3, 2), dtype=np.uint8)
        labels = np.array([0, 3, 9, 1, 3], dtype=np.uint8)
        ip, lp = write_idx_pair(tmp_path, images, labels)
        ds = load_idx(ip, lp)
        assert ds.X.shape == (5, 6)
        np.testing.assert_allclose(
            ds.X, images.reshape(5, 6) / 255.0, atol=1e-12
        )
        assert ds.n_classes == 10  # digit data defaults to ten classes
        np.testing.assert_array_equal(ds.labels(), labels)

    def test_gzip_detection(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(4, 2, 2), dtype=np.uint8)
        labels = np.array([1, 0, 2, 1], dtype=np.uint8)
        ip, lp = write_idx_pair(tmp_path, images, labels, gz=True)
        ds = load_idx(ip, lp)
        assert ds.n == 4

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad-idx3-ubyte"
        p.write_bytes(struct.pack(">IIII", 0xDEAD, 1, 1, 1) + b"\x00")
        lp = tmp_path / "labels-idx1-ubyte"
        lp.write_bytes(struct.pack(">II", 0x801, 1) + b"\x00")
        with pytest.raises(DataFormatError, match="magic"):
            load_idx(str(p), str(lp))

    def test_truncated_pixels(self, tmp_path):
        p = tmp_path / "short-idx3-ubyte"
        p.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + b"\x00" * 5)
        lp = tmp_path / "labels-idx1-ubyte"
        lp.write_bytes(struct.pack(">II", 0x801, 2) + b"\x00\x01")
        with pytest.raises(DataFormatError, match="truncated"):
            load_idx(str(p), str(lp))

    def test_count_mismatch(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(3, 2, 2), dtype=np.uint8)
        labels = np.array([0, 1], dtype=np.uint8)
        ip, lp = write_idx_pair(tmp_path, images, labels)
        with pytest.raises(DataFormatError, match="count"):
            load_idx(ip, lp)


class TestLibsvm:
    def test_basic_parse(self, tmp_path):
        p = tmp_path / "data.libsvm"
        p.write_text("2 1:0.5 4:1.5\n1 2:2.0\n2 1:1.0 2:1.0 4:0.25\n")
        ds = load_libsvm(str(p))
        assert sp.issparse(ds.X)
        assert ds.X.shape == (3, 4)
        assert ds.n_classes == 2
        assert list(ds.class_names) == ["1", "2"]
        np.testing.assert_allclose(ds.X.toarray()[0], [0.5, 0, 0, 1.5])
        np.testing.assert_array_equal(ds.labels(), [1, 0, 1])

    def test_n_features_override(self, tmp_path):
        p = tmp_path / "data.libsvm"
        p.write_text("1 1:1.0\n")
        ds = load_libsvm(str(p), n_features=10)
        assert ds.X.shape == (1, 10)

    def test_index_exceeds_declared_width(self, tmp_path):
        p = tmp_path / "data.libsvm"
        p.write_text("1 1:1.0\n1 7:2.0\n")
        with pytest.raises(DataFormatError, match=":2:"):
            load_libsvm(str(p), n_features=3)

    def test_nonascending_indices(self, tmp_path):
        p = tmp_path / "bad.libsvm"
        p.write_text("1 3:1.0 2:1.0\n")
        with pytest.raises(DataFormatError, match="ascending"):
            load_libsvm(str(p))

    def test_error_names_line(self, tmp_path):
        p = tmp_path / "bad.libsvm"
        p.write_text("1 1:1.0\n1 nonsense\n")
        with pytest.raises(DataFormatError, match=":2:"):
            load_libsvm(str(p))

    def test_one_based_indexing_enforced(self, tmp_path):
        p = tmp_path / "bad.libsvm"
        p.write_text("1 0:1.0\n")
        with pytest.raises(DataFormatError, match="1-based"):
            load_libsvm(str(p))

    def test_numeric_label_sort(self, tmp_path):
        p = tmp_path / "data.libsvm"
        p.write_text("10 1:1\n2 1:1\n-1 1:1\n")
        ds = load_libsvm(str(p))
        assert list(ds.class_names) == ["-1", "2", "10"]


class TestTermHelpers:
    def test_log_tf(self):
        X = sp.csr_matrix(np.array([[0.0, 3.0], [1.0, 0.0]]))
        out = log_tf(X)
        assert sp.issparse(out)
        np.testing.assert_allclose(
            out.toarray(), np.log1p([[0.0, 3.0], [1.0, 0.0]]), atol=1e-12
        )

    def test_log_tf_rejects_negative(self):
        with pytest.raises(ValueError):
            log_tf(np.array([[-1.0]]))

    def test_prune_rare_terms(self):
        Xtr = sp.csr_matrix(np.array([[3.0, 1.0, 0.0], [2.0, 1.0, 0.0]]))
        Xte = sp.csr_matrix(np.array([[1.0, 1.0, 1.0]]))
        tr = Dataset(X=Xtr, Y=np.eye(2), class_names=["a", "b"])
        te = Dataset(X=Xte, Y=np.eye(2)[[0]], class_names=["a", "b"])
        tr2, te2, kept = prune_rare_terms(tr, te, min_count=3)
        np.testing.assert_array_equal(kept, [0])
        assert tr2.X.shape == (2, 1)
        assert te2.X.shape == (1, 1)
        np.testing.assert_allclose(te2.X.toarray(), [[1.0]])

    def test_filter_single_topic(self):
        topics = [
            {"corporate"},
            {"corporate", "markets"},
            {"weather"},
            {"economics"},
        ]
        keep, labels = filter_single_topic(topics)
        np.testing.assert_array_equal(keep, [0, 3])
        np.testing.assert_array_equal(labels, [0, 1])


class TestSynthesize:
    def test_multinomial_shapes_and_provenance(self):
        spec = SyntheticSpec(n=100, d=6, k=4, link="softmax", noise="multinomial")
        ds = synthesize(spec, seed=5)
        assert ds.X.shape == (100, 6)
        assert ds.Y.shape == (100, 4)
        assert set(np.unique(ds.Y)) <= {0.0, 1.0}
        np.testing.assert_array_equal(ds.Y.sum(axis=1), np.ones(100))
        assert ds.provenance["seed"] == 5
        assert ds.w_star.shape == (4, 6)

    def test_noiseless_soft_targets_exact(self):
        spec = SyntheticSpec(n=50, d=5, k=3, link="softmax", noise="noiseless-soft")
        ds = synthesize(spec, seed=0)
        np.testing.assert_allclose(
            ds.Y, softmax(ds.X @ ds.w_star.T), atol=1e-12
        )

    def test_wstar_scale(self):
        spec = SyntheticSpec(n=30, d=4, k=3, wstar_scale=2.5)
        ds = synthesize(spec, seed=1)
        assert np.linalg.norm(ds.w_star) == pytest.approx(2.5)

    def test_identity_link_targets_on_simplex(self):
        spec = SyntheticSpec(n=80, d=6, k=4, link="identity", noise="noiseless-soft")
        ds = synthesize(spec, seed=2)
        # an intercept column is appended so the mean can sit on the simplex
        assert ds.X.shape == (80, 7)
        assert ds.provenance["intercept_appended"]
        P = ds.X @ ds.w_star.T
        assert np.all(P >= 0)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(ds.Y, P, atol=1e-12)

    def test_spectrum_pair_plants_covariance_eigenvalues(self):
        # entries are eigenvalues of the x-covariance, so the singular value
        # spread of X is the square root of the requested eigenvalue spread
        spec = SyntheticSpec(n=500, d=8, k=3, spectrum=(1e-6, 1.0))
        ds = synthesize(spec, seed=3)
        s = np.linalg.svd(ds.X, compute_uv=False)
        assert s[0] / s[-1] == pytest.approx(1e3, rel=0.35)

    def test_flat_spectrum_concentrates_to_identity(self):
        # oracle: the sampling distribution of |Sigma_hat - I| over repeated
        # draws; the frozen-seed draw must sit within three of its sigmas
        spec = SyntheticSpec(n=2000, d=5, k=2)
        devs = []
        for seed in range(30):
            ds = synthesize(spec, seed=100 + seed)
            S = ds.X.T @ ds.X / ds.n
            devs.append(np.linalg.norm(S - np.eye(5), ord=2))
        ds = synthesize(spec, seed=0)
        S = ds.X.T @ ds.X / ds.n
        dev = np.linalg.norm(S - np.eye(5), ord=2)
        assert dev <= np.mean(devs) + 3 * np.std(devs)

    def test_deterministic_in_seed(self):
        spec = SyntheticSpec(n=20, d=3, k=2)
        a = synthesize(spec, seed=9)
        b = synthesize(spec, seed=9)
        c = synthesize(spec, seed=10)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Y, b.Y)
        assert not np.array_equal(a.X, c.X)

    def test_unknown_noise_rejected(self):
        with pytest.raises(ValueError):
            synthesize(SyntheticSpec(n=10, d=2, k=2, noise="poisson"), seed=0)

    def test_multinomial_label_frequencies_track_means(self):
        # with many draws the empirical class rates match the soft targets
        spec = SyntheticSpec(n=20000, d=4, k=3, link="softmax", noise="multinomial")
        ds = synthesize(spec, seed=4)
        P = softmax(ds.X @ ds.w_star.T)
        np.testing.assert_allclose(
            ds.Y.mean(axis=0), P.mean(axis=0), atol=3 * 0.5 / np.sqrt(20000)
        )


class TestSplit:
    def test_split_disjoint_and_seeded(self):
        ds = synthesize(SyntheticSpec(n=50, d=3, k=2), seed=0)
        tr, te = split_dataset(ds, n_train=30, seed=1)
        assert tr.n == 30 and te.n == 20
        tr2, te2 = split_dataset(ds, n_train=30, seed=1)
        np.testing.assert_array_equal(tr.X, tr2.X)
        assert tr.split == "train" and te.split == "test"
        joined = np.vstack([tr.X, te.X])
        assert np.unique(joined, axis=0).shape[0] == 50

    def test_split_bounds(self):
        ds = synthesize(SyntheticSpec(n=10, d=2, k=2), seed=0)
        with pytest.raises(ValueError):
            split_dataset(ds, n_train=10)


class TestContainer:
    def test_dense_round_trip(self, tmp_path):
        ds = synthesize(SyntheticSpec(n=25, d=4, k=3), seed=6)
        path = tmp_path / "data.glmd"
        save_dataset(ds, str(path))
        back = load_dataset(str(path))
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.Y, ds.Y)
        assert list(back.class_names) == list(ds.class_names)
        assert back.provenance == ds.provenance
        assert back.split == ds.split

    def test_sparse_round_trip(self, tmp_path, rng):
        X = rng.normal(size=(10, 6))
        X[np.abs(X) < 1.0] = 0.0
        ds = Dataset(
            X=sp.csr_matrix(X),
            Y=np.eye(3)[rng.integers(0, 3, size=10)],
            class_names=["a", "b", "c"],
            split="train",
            provenance={"origin": "unit-test"},
        )
        path = tmp_path / "sparse.glmd"
        save_dataset(ds, str(path))
        back = load_dataset(str(path))
        assert sp.issparse(back.X)
        np.testing.assert_allclose(back.X.toarray(), X, atol=0)
        assert back.provenance == {"origin": "unit-test"}

    def test_bytes_are_deterministic(self, tmp_path):
        ds = synthesize(SyntheticSpec(n=15, d=3, k=2), seed=7)
        p1, p2 = tmp_path / "a.glmd", tmp_path / "b.glmd"
        save_dataset(ds, str(p1))
        save_dataset(ds, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.glmd"
        p.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(DataFormatError, match="magic"):
            load_dataset(str(p))

    def test_truncation_detected(self, tmp_path):
        ds = synthesize(SyntheticSpec(n=15, d=3, k=2), seed=7)
        p = tmp_path / "cut.glmd"
        save_dataset(ds, str(p))
        raw = p.read_bytes()
        p.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(DataFormatError, match="truncated"):
            load_dataset(str(p))

    def test_trailing_garbage_detected(self, tmp_path):
        ds = synthesize(SyntheticSpec(n=15, d=3, k=2), seed=7)
        p = tmp_path / "padded.glmd"
        save_dataset(ds, str(p))
        p.write_bytes(p.read_bytes() + b"extra")
        with pytest.raises(DataFormatError, match="trailing"):
            load_dataset(str(p))


class TestDataset:
    def test_row_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Dataset(X=np.zeros((3, 2)), Y=np.eye(2), class_names=["a", "b"])

    def test_labels_are_argmax(self):
        Y = np.array([[0.2, 0.8], [0.9, 0.1]])
        ds = Dataset(X=np.zeros((2, 1)), Y=Y, class_names=["a", "b"])
        np.testing.assert_array_equal(ds.labels(), [1, 0])
