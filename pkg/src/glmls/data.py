"""Dataset ingestion: IDX and libsvm parsing, text preprocessing, synthesis.

Every loader produces the same in-memory shape: a design matrix (dense or
CSR) plus an n x k target matrix whose rows live on the probability simplex.
No loader fetches anything over the network; paths always point at local
files the user supplied.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .glm import softmax
from .validation import check_simplex_rows


class DataFormatError(ValueError):
    """A file failed to parse; the message carries file and position context."""


@dataclass
class Dataset:
    """A design matrix with simplex-row targets and bookkeeping.

    ``w_star`` is the generating weight matrix for synthetic data and None
    otherwise; it is not persisted by the binary container.
    """

    X: object  # ndarray or CSR matrix, n x d
    Y: np.ndarray  # n x k
    class_names: list[str] = field(default_factory=list)
    split: str = ""
    provenance: dict = field(default_factory=dict)
    w_star: np.ndarray | None = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(
                f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}"
            )
        check_simplex_rows(self.Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return self.Y.shape[1]

    def labels(self) -> np.ndarray:
        return np.argmax(self.Y, axis=1)


# ---------------------------------------------------------------------------
# IDX image/label files


def _read_maybe_gzip(path: str) -> bytes:
    with open(path, "rb") as f:
        head = f.read(2)
        f.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(f) as g:
                return g.read()
        return f.read()


_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load big-endian IDX image/label files (gzipped or raw) as a dataset.

    Pixels are scaled to [0, 1]; labels become one-hot rows.
    """
    raw = _read_maybe_gzip(images_path)
    if len(raw) < 16:
        raise DataFormatError(f"{images_path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != _IDX_IMAGE_MAGIC:
        raise DataFormatError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{_IDX_IMAGE_MAGIC:08x}"
        )
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise DataFormatError(
            f"{images_path}: expected {expected} bytes for {count} images "
            f"of {rows}x{cols}, got {len(raw)}"
        )
    X = np.frombuffer(raw, dtype=np.uint8, offset=16).astype(np.float64)
    X = X.reshape(count, rows * cols) / 255.0

    raw = _read_maybe_gzip(labels_path)
    if len(raw) < 8:
        raise DataFormatError(f"{labels_path}: truncated IDX header")
    magic, lcount = struct.unpack(">II", raw[:8])
    if magic != _IDX_LABEL_MAGIC:
        raise DataFormatError(
            f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{_IDX_LABEL_MAGIC:08x}"
        )
    if len(raw) != 8 + lcount:
        raise DataFormatError(
            f"{labels_path}: expected {8 + lcount} bytes for {lcount} labels, got {len(raw)}"
        )
    if lcount != count:
        raise DataFormatError(
            f"label count {lcount} does not match image count {count}"
        )
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    k = max(10, int(labels.max()) + 1) if count else 10
    Y = np.zeros((count, k))
    Y[np.arange(count), labels] = 1.0
    return Dataset(
        X=X,
        Y=Y,
        class_names=[str(c) for c in range(k)],
        provenance={"format": "idx", "images": images_path, "labels": labels_path},
    )


# ---------------------------------------------------------------------------
# libsvm text format


def load_libsvm(path: str, n_features: int | None = None) -> Dataset:
    """Parse 'label index:value ...' lines into a CSR dataset.

    Indices are 1-based and must be strictly ascending within a line.  The
    label-to-class mapping sorts the distinct labels numerically, so it is
    deterministic for a given file.
    """
    data: list[float] = []
    indices: list[int] = []
    indptr = [0]
    raw_labels: list[float] = []
    max_index = 0
    max_index_line = 0

    with open(path, "rt", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            try:
                raw_labels.append(float(tokens[0]))
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: label {tokens[0]!r} is not numeric"
                ) from None
            prev = 0
            for tok in tokens[1:]:
                idx_s, _, val_s = tok.partition(":")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise DataFormatError(
                        f"{path}:{lineno}: malformed feature {tok!r}"
                    ) from None
                if idx < 1:
                    raise DataFormatError(
                        f"{path}:{lineno}: feature index {idx} is not "
                        f"positive; indices are 1-based"
                    )
                if idx <= prev:
                    raise DataFormatError(
                        f"{path}:{lineno}: feature indices must be strictly "
                        f"ascending ({idx} after {prev})"
                    )
                prev = idx
                indices.append(idx - 1)
                data.append(val)
            if prev > max_index:
                max_index = prev
                max_index_line = lineno
            indptr.append(len(indices))

    n = len(raw_labels)
    if n == 0:
        raise DataFormatError(f"{path}: no examples found")
    d = n_features if n_features is not None else max_index
    if max_index > d:
        raise DataFormatError(
            f"{path}:{max_index_line}: feature index {max_index} exceeds "
            f"n_features={d}"
        )
    X = sp.csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(n, d),
    )

    classes = sorted(set(raw_labels))
    index = {c: i for i, c in enumerate(classes)}
    Y = np.zeros((n, len(classes)))
    for r, lab in enumerate(raw_labels):
        Y[r, index[lab]] = 1.0

    def render(c: float) -> str:
        return str(int(c)) if float(c).is_integer() else str(c)

    return Dataset(
        X=X,
        Y=Y,
        class_names=[render(c) for c in classes],
        provenance={"format": "libsvm", "path": path},
    )


# ---------------------------------------------------------------------------
# text preprocessing


def log_tf(X):
    """log(1 + count) transform; rejects negative counts."""
    if sp.issparse(X):
        if X.data.size and X.data.min() < 0:
            raise ValueError("counts must be nonnegative")
        out = X.copy().astype(np.float64)
        out.data = np.log1p(out.data)
        return out
    X = np.asarray(X, dtype=np.float64)
    if X.size and X.min() < 0:
        raise ValueError("counts must be nonnegative")
    return np.log1p(X)


def prune_rare_terms(
    train: Dataset, test: Dataset | None = None, min_count: float = 3
) -> tuple[Dataset, Dataset | None, np.ndarray]:
    """Drop columns with fewer than ``min_count`` total occurrences on train.

    Occurrences are summed raw counts, so call this before any log transform.
    The same columns are dropped from the test split; the kept column indices
    are returned so the mapping survives.
    """
    X = train.X
    totals = np.asarray(X.sum(axis=0)).ravel()
    kept = np.flatnonzero(totals >= min_count)

    def slice_ds(ds: Dataset) -> Dataset:
        Xs = ds.X[:, kept]
        if sp.issparse(Xs):
            Xs = Xs.tocsr()
        prov = dict(ds.provenance)
        prov["pruned_min_count"] = min_count
        prov["n_features_before"] = int(X.shape[1])
        return Dataset(
            X=Xs, Y=ds.Y, class_names=list(ds.class_names),
            split=ds.split, provenance=prov,
        )

    return slice_ds(train), (slice_ds(test) if test is not None else None), kept


def filter_single_topic(
    topics_per_doc, classes=("corporate", "economics", "government", "markets")
) -> tuple[np.ndarray, np.ndarray]:
    """Keep documents tagged with exactly one of the given topic names.

    Takes an iterable of per-document topic collections (from a user-supplied
    corpus export) and returns (row indices, class indices into ``classes``).
    Documents with zero or several of the listed topics are dropped.
    """
    keep: list[int] = []
    labels: list[int] = []
    class_pos = {c: i for i, c in enumerate(classes)}
    for i, topics in enumerate(topics_per_doc):
        hits = [class_pos[t] for t in topics if t in class_pos]
        if len(hits) == 1:
            keep.append(i)
            labels.append(hits[0])
    return np.asarray(keep, dtype=np.intp), np.asarray(labels, dtype=np.intp)


# ---------------------------------------------------------------------------
# synthetic data with a known generating model


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for Gaussian-feature GLM data.

    ``spectrum`` sets the covariance eigenvalues: None for identity, a
    scalar for equal eigenvalues, a (lo, hi) pair for a geometric ramp, or a
    full length-d sequence.  ``wstar_scale`` is the Frobenius norm of the
    generating weights.  ``noise`` is 'noiseless-soft' (targets exactly
    g(W* x)) or 'multinomial' (one sampled one-hot label per row).
    """

    n: int
    d: int
    k: int
    link: str = "softmax"
    spectrum: object = None
    wstar_scale: float = 1.0
    noise: str = "noiseless-soft"


def _resolve_spectrum(spec: SyntheticSpec) -> np.ndarray:
    s = spec.spectrum
    if s is None:
        return np.ones(spec.d)
    if np.isscalar(s):
        return np.full(spec.d, float(s))
    s = np.asarray(s, dtype=np.float64)
    if s.shape == (2,) and spec.d != 2:
        return np.geomspace(s[0], s[1], spec.d)
    if s.shape == (spec.d,):
        return s.copy()
    raise ValueError(
        f"spectrum must be None, a scalar, a (lo, hi) pair, or length d={spec.d}"
    )


def _sample_onehot(P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n, k = P.shape
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0  # guard against rounding in the last bin
    u = rng.random((n, 1))
    labels = np.sum(u > cum, axis=1)
    Y = np.zeros((n, k))
    Y[np.arange(n), labels] = 1.0
    return Y


def synthesize(spec: SyntheticSpec, seed: int = 0) -> Dataset:
    """Draw Gaussian features and GLM targets from a known weight matrix.

    Softmax data: x ~ N(0, Q diag(spectrum) Q^T), targets from
    softmax(W* x).  Identity-link data appends a constant feature and builds
    W* so that every W* x lands exactly on the simplex: the non-constant
    block has zero column sums (so rows of W* x sum to 1) and is scaled
    against the realized draws (so entries stay positive).  The generating
    weights are returned in ``w_star``.
    """
    if spec.k < 2:
        raise ValueError("need at least two classes")
    if spec.noise not in ("noiseless-soft", "multinomial"):
        raise ValueError(f"unknown noise mode {spec.noise!r}")
    if spec.link not in ("softmax", "identity"):
        raise ValueError(f"unknown link {spec.link!r}")

    rng = np.random.default_rng(seed)
    eig = _resolve_spectrum(spec)
    if np.any(eig < 0):
        raise ValueError("spectrum must be nonnegative")
    Q, Rq = np.linalg.qr(rng.standard_normal((spec.d, spec.d)))
    Q = Q * np.sign(np.diag(Rq))  # deterministic orientation
    A = Q * np.sqrt(eig)  # covariance A A^T = Q diag(eig) Q^T
    X = rng.standard_normal((spec.n, spec.d)) @ A.T

    prov = {
        "format": "synthetic",
        "link": spec.link,
        "noise": spec.noise,
        "seed": seed,
    }

    if spec.link == "softmax":
        W = rng.standard_normal((spec.k, spec.d))
        W *= spec.wstar_scale / np.linalg.norm(W)
        P = softmax(X @ W.T)
        Xout = X
    else:
        delta = rng.standard_normal((spec.k, spec.d))
        delta -= delta.mean(axis=0, keepdims=True)  # zero column sums
        U = X @ delta.T
        peak = np.max(np.abs(U))
        if peak > 0:
            delta *= 0.95 / (spec.k * peak)
        W = np.hstack([delta, np.full((spec.k, 1), 1.0 / spec.k)])
        Xout = np.hstack([X, np.ones((spec.n, 1))])
        P = Xout @ W.T
        prov["intercept_appended"] = True

    Y = P if spec.noise == "noiseless-soft" else _sample_onehot(P, rng)
    return Dataset(
        X=Xout,
        Y=Y,
        class_names=[str(c) for c in range(spec.k)],
        provenance=prov,
        w_star=W,
    )


def split_dataset(ds: Dataset, n_train: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded random row split into (train, test)."""
    if not 0 < n_train < ds.n:
        raise ValueError(f"need 0 < n_train < {ds.n}, got {n_train}")
    perm = np.random.default_rng(seed).permutation(ds.n)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])

    def take(rows: np.ndarray, split: str) -> Dataset:
        prov = dict(ds.provenance)
        prov.update({"split_seed": seed, "split_n_train": n_train})
        return Dataset(
            X=ds.X[rows], Y=ds.Y[rows], class_names=list(ds.class_names),
            split=split, provenance=prov,
        )

    return take(tr, "train"), take(te, "test")


# ---------------------------------------------------------------------------
# binary dataset container


_MAGIC = b"GLMD"
_VERSION = 1
_FLAG_SPARSE = 1
_FLAG_ONEHOT = 2
_HEADER = struct.Struct("<4sIQQQI")


def _is_onehot(Y: np.ndarray) -> bool:
    if not np.all((Y == 0.0) | (Y == 1.0)):
        return False
    return bool(np.all(Y.sum(axis=1) == 1.0))


def save_dataset(ds: Dataset, path: str) -> None:
    """Write the little-endian container: header, strings, targets, matrix.

    One-hot targets are stored as label indices, soft targets as float64
    rows.  Writing is deterministic, so save/load/save round-trips produce
    identical bytes.
    """
    sparse = sp.issparse(ds.X)
    onehot = _is_onehot(ds.Y)
    flags = (_FLAG_SPARSE if sparse else 0) | (_FLAG_ONEHOT if onehot else 0)
    n, d, k = ds.n, ds.n_features, ds.n_classes

    def pack_str(s: str) -> bytes:
        b = s.encode("utf-8")
        return struct.pack("<I", len(b)) + b

    chunks = [_HEADER.pack(_MAGIC, _VERSION, n, d, k, flags)]
    chunks.append(pack_str(ds.split))
    chunks.append(struct.pack("<I", len(ds.class_names)))
    for name in ds.class_names:
        chunks.append(pack_str(name))
    chunks.append(pack_str(json.dumps(ds.provenance, sort_keys=True, separators=(",", ":"))))

    if onehot:
        chunks.append(ds.labels().astype("<u4").tobytes())
    else:
        chunks.append(np.ascontiguousarray(ds.Y, dtype="<f8").tobytes())

    if sparse:
        Xc = ds.X.tocsr()
        Xc.sort_indices()
        chunks.append(struct.pack("<Q", Xc.nnz))
        chunks.append(Xc.indptr.astype("<u8").tobytes())
        chunks.append(Xc.indices.astype("<u8").tobytes())
        chunks.append(Xc.data.astype("<f8").tobytes())
    else:
        chunks.append(np.ascontiguousarray(ds.X, dtype="<f8").tobytes())

    with open(path, "wb") as f:
        f.write(b"".join(chunks))


class _Cursor:
    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, nbytes: int, what: str) -> bytes:
        if self.off + nbytes > len(self.buf):
            raise DataFormatError(
                f"{self.path}: truncated while reading {what} "
                f"(need {nbytes} bytes at offset {self.off}, have {len(self.buf) - self.off})"
            )
        out = self.buf[self.off : self.off + nbytes]
        self.off += nbytes
        return out

    def take_str(self, what: str) -> str:
        (ln,) = struct.unpack("<I", self.take(4, f"{what} length"))
        return self.take(ln, what).decode("utf-8")


def load_dataset(path: str) -> Dataset:
    """Read a container written by ``save_dataset``."""
    with open(path, "rb") as f:
        buf = f.read()
    cur = _Cursor(buf, path)
    magic, version, n, d, k, flags = _HEADER.unpack(cur.take(_HEADER.size, "header"))
    if magic != _MAGIC:
        raise DataFormatError(f"{path}: not a dataset container (magic {magic!r})")
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported container version {version}")

    split = cur.take_str("split name")
    (n_names,) = struct.unpack("<I", cur.take(4, "class-name count"))
    class_names = [cur.take_str(f"class name {i}") for i in range(n_names)]
    provenance = json.loads(cur.take_str("provenance"))

    if flags & _FLAG_ONEHOT:
        labels = np.frombuffer(cur.take(4 * n, "labels"), dtype="<u4")
        Y = np.zeros((n, k))
        Y[np.arange(n), labels] = 1.0
    else:
        Y = np.frombuffer(cur.take(8 * n * k, "targets"), dtype="<f8").reshape(n, k).copy()

    if flags & _FLAG_SPARSE:
        (nnz,) = struct.unpack("<Q", cur.take(8, "nnz"))
        indptr = np.frombuffer(cur.take(8 * (n + 1), "indptr"), dtype="<u8").astype(np.int64)
        indices = np.frombuffer(cur.take(8 * nnz, "indices"), dtype="<u8").astype(np.int64)
        data = np.frombuffer(cur.take(8 * nnz, "values"), dtype="<f8").copy()
        X = sp.csr_matrix((data, indices, indptr), shape=(n, d))
    else:
        X = np.frombuffer(cur.take(8 * n * d, "matrix"), dtype="<f8").reshape(n, d).copy()

    if cur.off != len(buf):
        raise DataFormatError(f"{path}: {len(buf) - cur.off} trailing bytes")
    return Dataset(X=X, Y=Y, class_names=class_names, split=split, provenance=provenance)
