"""Command line entry points: train, eval, spectrum, bench.

Exit codes: 0 on success, 2 for usage/config/data problems, 3 for numerical
failures.  Every artifact written embeds the resolved configuration, the
seed, and a content hash of its inputs; the numerical content of a trace is
a pure function of the configuration, and its digest makes that checkable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp

from .data import (
    DataFormatError,
    Dataset,
    SyntheticSpec,
    load_dataset,
    load_idx,
    load_libsvm,
    log_tf,
    prune_rare_terms,
    synthesize,
)
from .diagnostics import (
    calibration_bound_report,
    classification_error,
    confusion_counts,
    descent_bound_reports,
    estimate_link_condition,
    residuals_monotone,
)
from .features import (
    BlockSpec,
    CalibrationBasis,
    PcaBasis,
    make_generator,
    median_bandwidth,
    pca_fit_project,
    rff_frequencies,
    rff_transform,
)
from .glm import make_link
from .linalg import NumericalError, top_singular_values
from .solvers import (
    CalibratedModel,
    CalibrationStage,
    StageRecord,
    StagewiseModel,
    TrainTrace,
    WeightMatrix,
    calibrated_least_squares,
    generalized_least_squares,
    gradient_descent,
    stagewise,
)


@dataclass
class ExperimentConfig:
    """Everything a run needs, serializable to key=value config files."""

    command: str = "train"
    data: str = "synthetic"
    data_format: str = "auto"
    data_dir: str | None = None
    labels: str | None = None
    split: str = "train"
    synth: str = "n=500,d=10,k=5,link=softmax,noise=multinomial"
    algo: str = "gls"
    link: str = "logistic"
    iters: int = 100
    ridge: float = 0.0
    lipschitz: float | None = None
    step: float | None = None
    basis_degree: int = 3
    generator: str = "rff"
    block: int = 512
    stages: int = 10
    inner: str = "linear"
    passes: int = 1
    pca: int | None = None
    rff: int | None = None
    bandwidth: str = "median"
    log_tf: bool = False
    prune: float | None = None
    top_r: int = 1000
    max_rows: int = 10000
    seed: int = 0
    early_stop: bool = False
    threads: int | None = None
    out: str | None = None

    @classmethod
    def from_args(cls, command: str, args: argparse.Namespace) -> "ExperimentConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name == "command":
                continue
            if hasattr(args, f.name):
                kwargs[f.name] = getattr(args, f.name)
        return cls(command=command, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


def read_config_file(path: str) -> list[str]:
    """Turn key=value lines into CLI arguments (flags on the real CLI win)."""
    out: list[str] = []
    with open(path, "rt", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip().replace("_", "-")
            value = value.strip()
            if value.lower() in ("true", "false"):
                if value.lower() == "true":
                    out.append(f"--{key}")
            else:
                out.extend([f"--{key}", value])
    return out


# ---------------------------------------------------------------------------
# dataset resolution


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find_mnist_pair(data_dir: str, split: str) -> tuple[str, str]:
    images, labels = _MNIST_FILES[split]

    def resolve(stem: str) -> str:
        for cand in (stem, stem + ".gz"):
            p = os.path.join(data_dir, cand)
            if os.path.exists(p):
                return p
        raise FileNotFoundError(
            f"{data_dir} does not contain {stem} or {stem}.gz"
        )

    return resolve(images), resolve(labels)


def parse_synth_spec(text: str, seed: int) -> SyntheticSpec:
    opts: dict = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"synthetic spec entries must be key=value, got {part!r}")
        key, _, value = part.partition("=")
        opts[key.strip()] = value.strip()

    def geti(name, default):
        return int(opts.pop(name)) if name in opts else default

    spectrum = None
    if "spectrum" in opts:
        raw = opts.pop("spectrum")
        if ":" in raw:
            lo, hi = raw.split(":", 1)
            spectrum = (float(lo), float(hi))
        else:
            spectrum = float(raw)
    spec = SyntheticSpec(
        n=geti("n", 500),
        d=geti("d", 10),
        k=geti("k", 5),
        link=opts.pop("link", "softmax"),
        spectrum=spectrum,
        wstar_scale=float(opts.pop("wstar", 1.0)),
        noise=opts.pop("noise", "multinomial"),
    )
    if opts:
        raise ValueError(f"unknown synthetic spec keys: {sorted(opts)}")
    return spec


def load_configured_dataset(cfg: ExperimentConfig) -> tuple[Dataset, str]:
    """Resolve a dataset and a sha256 content hash of its source."""
    if cfg.data == "synthetic":
        spec = parse_synth_spec(cfg.synth, cfg.seed)
        ds = synthesize(spec, seed=cfg.seed)
        digest = hashlib.sha256(
            f"synthetic:{cfg.synth}:seed={cfg.seed}".encode()
        ).hexdigest()
        return ds, digest
    if cfg.data == "mnist":
        if not cfg.data_dir:
            raise ValueError("--data mnist requires --data-dir")
        images, labels = _find_mnist_pair(cfg.data_dir, cfg.split)
        ds = load_idx(images, labels)
        ds.split = cfg.split
        h = hashlib.sha256()
        h.update(_sha256_file(images).encode())
        h.update(_sha256_file(labels).encode())
        return ds, h.hexdigest()

    path = cfg.data
    fmt = cfg.data_format
    if fmt == "auto":
        if path.endswith(".glmd"):
            fmt = "glmd"
        elif "idx3" in os.path.basename(path) or path.endswith("-ubyte") or path.endswith("-ubyte.gz"):
            fmt = "idx"
        else:
            fmt = "libsvm"
    if fmt == "glmd":
        ds = load_dataset(path)
        return ds, _sha256_file(path)
    if fmt == "idx":
        if not cfg.labels:
            raise ValueError("idx format needs --labels for the label file")
        ds = load_idx(path, cfg.labels)
        h = hashlib.sha256()
        h.update(_sha256_file(path).encode())
        h.update(_sha256_file(cfg.labels).encode())
        return ds, h.hexdigest()
    if fmt == "libsvm":
        ds = load_libsvm(path)
        return ds, _sha256_file(path)
    raise ValueError(f"unknown data format {fmt!r}")


# ---------------------------------------------------------------------------
# feature pipeline


def build_feature_pipeline(cfg: ExperimentConfig, ds: Dataset):
    """Apply prune/log-tf/PCA/RFF in order; return features plus replay metadata."""
    X = ds.X
    meta: dict = {"steps": []}
    arrays: dict = {}

    if cfg.prune is not None:
        totals = np.asarray(X.sum(axis=0)).ravel()
        kept = np.flatnonzero(totals >= cfg.prune)
        X = X[:, kept]
        if sp.issparse(X):
            X = X.tocsr()
        meta["steps"].append({"kind": "columns", "array": "kept_columns"})
        arrays["kept_columns"] = kept.astype(np.int64)

    if cfg.log_tf:
        X = log_tf(X)
        meta["steps"].append({"kind": "log-tf"})

    if cfg.pca is not None:
        if sp.issparse(X):
            X = np.asarray(X.toarray())
        basis, X = pca_fit_project(X, cfg.pca)
        meta["steps"].append({"kind": "pca", "arrays": ["pca_mean", "pca_components"]})
        arrays["pca_mean"] = basis.mean
        arrays["pca_components"] = basis.components

    if cfg.rff is not None:
        if cfg.bandwidth == "median":
            bw = median_bandwidth(X, seed=cfg.seed)
        else:
            bw = float(cfg.bandwidth)
        spec = {
            "dim_in": int(X.shape[1]),
            "n_features": int(cfg.rff),
            "bandwidth": bw,
            "seed": cfg.seed,
        }
        omega, offsets = rff_frequencies(
            spec["dim_in"], spec["n_features"], bw, seed=cfg.seed
        )
        X = rff_transform(X, omega, offsets)
        meta["steps"].append({"kind": "rff", "spec": spec})

    return X, meta, arrays


def replay_feature_pipeline(X, meta: dict, arrays: dict):
    for step in meta["steps"]:
        kind = step["kind"]
        if kind == "columns":
            X = X[:, arrays[step["array"]]]
            if sp.issparse(X):
                X = X.tocsr()
        elif kind == "log-tf":
            X = log_tf(X)
        elif kind == "pca":
            if sp.issparse(X):
                X = np.asarray(X.toarray())
            basis = PcaBasis(
                mean=arrays["pca_mean"],
                components=arrays["pca_components"],
                singular_values=np.array([]),
            )
            X = basis.project(X)
        elif kind == "rff":
            spec = step["spec"]
            omega, offsets = rff_frequencies(
                spec["dim_in"], spec["n_features"], spec["bandwidth"], spec["seed"]
            )
            X = rff_transform(X, omega, offsets)
        else:
            raise ValueError(f"unknown pipeline step {kind!r}")
    return X


# ---------------------------------------------------------------------------
# model container (.npz with a JSON manifest entry)


def save_model(
    path: str,
    kind: str,
    cfg: ExperimentConfig,
    class_names: list[str],
    pipeline_meta: dict,
    pipeline_arrays: dict,
    model,
    input_hash: str,
) -> None:
    manifest = {
        "kind": kind,
        "config": cfg.to_dict(),
        "class_names": class_names,
        "pipeline": pipeline_meta,
        "input_hash": input_hash,
    }
    arrays = dict(pipeline_arrays)

    if kind in ("gls", "gd"):
        manifest["link"] = model.link.name
        manifest["lipschitz"] = model.link.lipschitz
        arrays["weights"] = model.W
    elif kind == "calibrated":
        manifest["basis_degree"] = len(model.basis.functions)
        if not all(name.startswith("y^") for name in model.basis.names):
            raise ValueError("only polynomial calibration bases can be serialized")
        manifest["n_features"] = model.n_features
        manifest["n_classes"] = model.n_classes
        manifest["n_stages"] = len(model.stages)
        for i, st in enumerate(model.stages):
            arrays[f"stage{i}_residual"] = st.residual_weights
            arrays[f"stage{i}_calibration"] = st.calibration_weights
    elif kind == "stagewise":
        manifest["inner"] = model.inner
        manifest["n_features"] = model.n_features
        manifest["n_classes"] = model.n_classes
        blocks = []
        for i, st in enumerate(model.stages):
            arrays[f"stage{i}_weights"] = st.weights
            spec = st.block.to_dict()
            if "columns" in spec:
                arrays[f"stage{i}_columns"] = np.asarray(spec.pop("columns"), dtype=np.int64)
                spec["columns_array"] = f"stage{i}_columns"
            blocks.append({"spec": spec, "augmented": st.augmented})
        manifest["blocks"] = blocks
    else:
        raise ValueError(f"unknown model kind {kind!r}")

    arrays["manifest"] = np.array(json.dumps(manifest, sort_keys=True))
    np.savez(path, **arrays)


class ComposedModel:
    """A deserialized model plus its feature pipeline."""

    def __init__(self, inner, pipeline_meta: dict, arrays: dict, manifest: dict):
        self.inner = inner
        self.pipeline_meta = pipeline_meta
        self.arrays = arrays
        self.manifest = manifest
        self.class_names = manifest["class_names"]

    def predict_scores(self, X):
        X = replay_feature_pipeline(X, self.pipeline_meta, self.arrays)
        return self.inner.predict_scores(X)


def load_model(path: str) -> ComposedModel:
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    manifest = json.loads(str(arrays.pop("manifest")))
    kind = manifest["kind"]

    if kind in ("gls", "gd"):
        link = make_link(manifest["link"], manifest.get("lipschitz"))
        inner = WeightMatrix(W=arrays["weights"], link=link)
    elif kind == "calibrated":
        stages = [
            CalibrationStage(
                residual_weights=arrays[f"stage{i}_residual"],
                calibration_weights=arrays[f"stage{i}_calibration"],
            )
            for i in range(manifest["n_stages"])
        ]
        inner = CalibratedModel(
            stages=stages,
            basis=CalibrationBasis.polynomial(manifest["basis_degree"]),
            n_features=manifest["n_features"],
            n_classes=manifest["n_classes"],
        )
    elif kind == "stagewise":
        stages = []
        for i, blk in enumerate(manifest["blocks"]):
            spec = dict(blk["spec"])
            col_key = spec.pop("columns_array", None)
            if col_key is not None:
                spec["columns"] = arrays[col_key]
            stages.append(
                StageRecord(
                    block=BlockSpec.from_dict(spec),
                    weights=arrays[f"stage{i}_weights"],
                    augmented=blk["augmented"],
                )
            )
        inner = StagewiseModel(
            stages=stages,
            inner=manifest["inner"],
            n_features=manifest["n_features"],
            n_classes=manifest["n_classes"],
        )
    else:
        raise DataFormatError(f"{path}: unknown model kind {kind!r}")
    return ComposedModel(inner, manifest["pipeline"], arrays, manifest)


# ---------------------------------------------------------------------------
# trace serialization


def trace_payload(cfg: ExperimentConfig, trace: TrainTrace, final: dict, input_hash: str) -> dict:
    body = {
        "config": cfg.to_dict(),
        "input_hash": input_hash,
        "initial": trace.initial.to_dict(),
        "iterations": [r.to_dict() for r in trace.iterations],
        "final": final,
    }
    # Where outputs land and how many threads ran do not affect the numbers,
    # so the digest ignores them; everything else in the config does.
    digest_cfg = {k: v for k, v in body["config"].items() if k not in ("out", "threads")}
    digest_src = json.dumps(
        {
            "config": digest_cfg,
            "input_hash": input_hash,
            "losses": [r.loss for r in trace.records],
            "mses": [r.mse for r in trace.records],
        },
        sort_keys=True,
    )
    body["content_digest"] = hashlib.sha256(digest_src.encode()).hexdigest()
    return body


def write_trace(cfg: ExperimentConfig, trace: TrainTrace, final: dict, input_hash: str, out_dir: str) -> str:
    payload = trace_payload(cfg, trace, final, input_hash)
    json_path = os.path.join(out_dir, "trace.json")
    with open(json_path, "wt", encoding="utf-8") as f:
        json.dump(payload, f, indent=1)
        f.write("\n")
    csv_path = os.path.join(out_dir, "trace.csv")
    with open(csv_path, "wt", encoding="utf-8") as f:
        f.write("t,loss,mse,seconds\n")
        for r in trace.records:
            f.write(f"{r.t},{r.loss!r},{r.mse!r},{r.seconds!r}\n")
    return json_path


# ---------------------------------------------------------------------------
# commands


def cmd_train(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.from_args("train", args)
    ds, input_hash = load_configured_dataset(cfg)
    X, pipe_meta, pipe_arrays = build_feature_pipeline(cfg, ds)
    Y = ds.Y

    t0 = time.perf_counter()
    if cfg.algo == "gls":
        link = make_link(cfg.link, cfg.lipschitz)
        model, trace = generalized_least_squares(
            X, Y, link, n_iter=cfg.iters, ridge=cfg.ridge, early_stop=cfg.early_stop
        )
        kind = "gls"
    elif cfg.algo == "gd":
        link = make_link(cfg.link, cfg.lipschitz)
        model, trace = gradient_descent(
            X, Y, link, n_iter=cfg.iters, step=cfg.step,
            early_stop=cfg.early_stop,
        )
        kind = "gd"
    elif cfg.algo == "calibrated":
        basis = CalibrationBasis.polynomial(cfg.basis_degree)
        model, trace = calibrated_least_squares(
            X, Y, basis=basis, n_iter=cfg.iters, ridge=cfg.ridge,
            early_stop=cfg.early_stop,
        )
        kind = "calibrated"
    elif cfg.algo == "stagewise":
        params = {"seed": cfg.seed, "n_passes": cfg.passes}
        if cfg.generator == "rff":
            params["bandwidth"] = (
                median_bandwidth(X, seed=cfg.seed)
                if cfg.bandwidth == "median"
                else float(cfg.bandwidth)
            )
        gen = make_generator(cfg.generator, **params)
        model, trace = stagewise(
            X, Y, gen, block_size=cfg.block, n_stages=cfg.stages,
            inner=cfg.inner, ridge=cfg.ridge, early_stop=cfg.early_stop,
        )
        kind = "stagewise"
    else:
        raise ValueError(f"unknown algorithm {cfg.algo!r}")
    seconds_total = time.perf_counter() - t0

    scores = model.predict_scores(X)
    train_error = classification_error(scores, ds.labels())
    final = {
        "error": train_error,
        "loss": trace.records[-1].loss,
        "mse": trace.records[-1].mse,
        "seconds_total": seconds_total,
    }

    out_dir = cfg.out or "."
    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "model.npz")
    save_model(
        model_path, kind, cfg, list(ds.class_names), pipe_meta, pipe_arrays,
        model, input_hash,
    )
    trace_path = write_trace(cfg, trace, final, input_hash, out_dir)
    print(
        f"trained {cfg.algo} on {ds.n} x {X.shape[1]} features, {ds.n_classes} classes: "
        f"train error {train_error:.4f}, final loss {final['loss']:.6g}"
    )
    print(f"wrote {model_path} and {trace_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.from_args("eval", args)
    model = load_model(args.model)
    ds, input_hash = load_configured_dataset(cfg)
    if model.class_names and list(ds.class_names) and list(ds.class_names) != list(model.class_names):
        raise ValueError(
            f"class mapping mismatch: model has {model.class_names}, "
            f"data has {ds.class_names}"
        )
    scores = model.predict_scores(ds.X)
    error = classification_error(scores, ds.labels())
    confusion = confusion_counts(scores, ds.labels())
    payload = {
        "config": cfg.to_dict(),
        "model": args.model,
        "model_input_hash": model.manifest.get("input_hash"),
        "eval_input_hash": input_hash,
        "n": ds.n,
        "error": error,
        "confusion": confusion.tolist(),
    }
    text = json.dumps(payload, indent=1, sort_keys=True)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        path = os.path.join(cfg.out, "metrics.json")
        with open(path, "wt", encoding="utf-8") as f:
            f.write(text + "\n")
        print(f"wrote {path}")
    print(f"eval error {error:.4f} on {ds.n} examples")
    return 0


def cmd_spectrum(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.from_args("spectrum", args)
    ds, input_hash = load_configured_dataset(cfg)
    X = ds.X
    if cfg.prune is not None:
        totals = np.asarray(X.sum(axis=0)).ravel()
        X = X[:, np.flatnonzero(totals >= cfg.prune)]
    if cfg.log_tf:
        X = log_tf(X)
    r = min(cfg.top_r, min(X.shape))
    report = top_singular_values(X, r, max_rows=cfg.max_rows, seed=cfg.seed)
    payload = {"config": cfg.to_dict(), "input_hash": input_hash}
    payload.update(report.to_dict())
    text = json.dumps(payload, indent=1, sort_keys=True)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        path = os.path.join(cfg.out, "spectrum.json")
        with open(path, "wt", encoding="utf-8") as f:
            f.write(text + "\n")
        print(f"wrote {path}")
    proxy = report.condition_proxy
    print(
        f"top-{r} spectrum over {report.rows_used} rows ({report.method}): "
        f"sigma_2/sigma_r = {proxy:.4g}" if np.isfinite(proxy)
        else f"top-{r} spectrum over {report.rows_used} rows ({report.method}): proxy undefined"
    )
    return 0


# --- bench suites ----------------------------------------------------------


def _bench_rows_print(rows: list[dict]) -> None:
    width = max(len(r["name"]) for r in rows) + 2
    print(f"{'check':<{width}}{'value':>14}{'expect':>22}{'pass':>6}{'seconds':>10}")
    for r in rows:
        print(
            f"{r['name']:<{width}}{r['value']:>14.6g}{r['expect']:>22}"
            f"{'yes' if r['pass'] else 'NO':>6}{r['seconds']:>10.2f}"
        )


def _bench_rate_bounds(args) -> list[dict]:
    rows = []

    tic = time.perf_counter()
    ds = synthesize(
        SyntheticSpec(n=500, d=10, k=5, link="softmax", noise="multinomial"), seed=0
    )
    link = make_link("softmax")
    ref, _ = generalized_least_squares(ds.X, ds.Y, link, n_iter=3000)
    from .glm import loss as glm_loss

    loss_opt = glm_loss(link, ref.W, ds.X, ds.Y)
    wnorm = float(np.linalg.norm(ref.W))
    _, trace = generalized_least_squares(ds.X, ds.Y, link, n_iter=200)
    reports = descent_bound_reports(trace, link, wnorm, loss_opt)
    sub = reports[0]
    gaps = np.array([r.value for r in sub.rows])
    bounds = np.array([r.bound for r in sub.rows])
    rows.append(
        {
            "name": "softmax loss gap under 2L|W*|^2/(t+4)",
            "value": float(np.max(gaps / bounds)),
            "expect": "<= 1",
            "pass": sub.satisfied,
            "seconds": time.perf_counter() - tic,
        }
    )

    tic = time.perf_counter()
    ds2 = synthesize(
        SyntheticSpec(n=400, d=8, k=3, link="softmax", noise="noiseless-soft"), seed=1
    )
    _, trace2 = calibrated_least_squares(ds2.X, ds2.Y, n_iter=50)
    lips_hat, mono_hat = estimate_link_condition(
        make_link("softmax"), ds2.X @ ds2.w_star.T, n_pairs=2000, seed=0
    )
    kappa = lips_hat / mono_hat if mono_hat > 0 else float("inf")
    report = calibration_bound_report(trace2, kappa)
    mono = residuals_monotone(trace2)
    rows.append(
        {
            "name": "calibrated residual monotone",
            "value": 1.0 if mono else 0.0,
            "expect": "= 1",
            "pass": mono,
            "seconds": time.perf_counter() - tic,
        }
    )
    rows.append(
        {
            "name": "calibrated mse under 22k^2/t",
            "value": float(
                max((r.value / r.bound) for r in report.rows if np.isfinite(r.bound))
            )
            if report.rows
            else 0.0,
            "expect": "<= 1 (advisory)",
            "pass": report.satisfied,
            "seconds": 0.0,
        }
    )
    return rows


def _bench_conditioning(args) -> list[dict]:
    from .glm import identity_link, loss as glm_loss

    rows = []
    link = identity_link()
    for label, spectrum in (("well", 1.0), ("ill", (1e-6, 1.0))):
        ds = synthesize(
            SyntheticSpec(
                n=2000, d=20, k=4, link="identity",
                spectrum=spectrum, noise="noiseless-soft",
            ),
            seed=3,
        )
        tic = time.perf_counter()
        model, trace = generalized_least_squares(ds.X, ds.Y, link, n_iter=1)
        gls_seconds = time.perf_counter() - tic
        loss_opt = glm_loss(link, model.W, ds.X, ds.Y)
        gap = trace.records[-1].loss - loss_opt
        rows.append(
            {
                "name": f"one-shot least squares gap ({label})",
                "value": float(gap),
                "expect": "<= 1e-6 at t=1",
                "pass": bool(gap <= 1e-6),
                "seconds": gls_seconds,
            }
        )
        tic = time.perf_counter()
        budget = 200 if label == "well" else 5000
        _, gd_trace = gradient_descent(ds.X, ds.Y, link, n_iter=budget)
        gd_seconds = time.perf_counter() - tic
        gaps = gd_trace.losses() - loss_opt
        reached = np.flatnonzero(gaps <= 1e-6)
        iters = int(reached[0]) if reached.size else budget + 1
        rows.append(
            {
                "name": f"gradient descent iterations to gap 1e-6 ({label})",
                "value": float(iters),
                "expect": "> 100 (100x the one-shot)" if label == "ill" else "finite",
                "pass": bool(iters > 100) if label == "ill" else bool(reached.size),
                "seconds": gd_seconds,
            }
        )
    return rows


def _mnist_or_die(args) -> tuple[Dataset, Dataset]:
    if not args.data_dir:
        raise ValueError("this suite needs --data-dir pointing at the IDX files")
    tr = load_idx(*_find_mnist_pair(args.data_dir, "train"))
    te = load_idx(*_find_mnist_pair(args.data_dir, "test"))
    return tr, te


def _bench_mnist_raw(args) -> list[dict]:
    tr, te = _mnist_or_die(args)
    expected = {"linear": 14.1, "logistic": 7.8, "calibrated": 8.1}
    rows = []

    def err_pct(model) -> float:
        scores = model.predict_scores(te.X)
        return 100.0 * classification_error(scores, te.labels())

    tic = time.perf_counter()
    lin, _ = generalized_least_squares(
        tr.X, tr.Y, make_link("identity"), n_iter=1, ridge=1e-6
    )
    rows.append(
        {
            "name": "raw pixels, linear regression error %",
            "value": err_pct(lin),
            "expect": f"{expected['linear']} +- 1.0",
            "pass": abs(err_pct(lin) - expected["linear"]) <= 1.0,
            "seconds": time.perf_counter() - tic,
        }
    )
    tic = time.perf_counter()
    logi, _ = generalized_least_squares(
        tr.X, tr.Y, make_link("softmax"), n_iter=args.iters, ridge=1e-6
    )
    rows.append(
        {
            "name": "raw pixels, logistic regression error %",
            "value": err_pct(logi),
            "expect": f"{expected['logistic']} +- 1.0",
            "pass": abs(err_pct(logi) - expected["logistic"]) <= 1.0,
            "seconds": time.perf_counter() - tic,
        }
    )
    tic = time.perf_counter()
    cal, _ = calibrated_least_squares(tr.X, tr.Y, n_iter=30, ridge=1e-6)
    rows.append(
        {
            "name": "raw pixels, calibrated error %",
            "value": err_pct(cal),
            "expect": f"{expected['calibrated']} +- 1.0",
            "pass": abs(err_pct(cal) - expected["calibrated"]) <= 1.0,
            "seconds": time.perf_counter() - tic,
        }
    )
    return rows


def _bench_mnist_rff(args) -> list[dict]:
    tr, te = _mnist_or_die(args)
    expected = {"linear": 1.48, "logistic": 1.33, "calibrated": 1.36}
    m = 8000 if args.rff is None else args.rff
    if m == 4000:
        expected = {"linear": 1.83, "logistic": 1.48, "calibrated": 1.54}

    basis, Xtr = pca_fit_project(np.asarray(tr.X), 50)
    Xte = basis.project(np.asarray(te.X))
    bw = median_bandwidth(Xtr, seed=args.seed)
    omega, offsets = rff_frequencies(50, m, bw, seed=args.seed)
    Ftr = rff_transform(Xtr, omega, offsets)
    Fte = rff_transform(Xte, omega, offsets)

    rows = []

    def run(name, fit):
        tic = time.perf_counter()
        model = fit()
        scores = model.predict_scores(Fte)
        err = 100.0 * classification_error(scores, te.labels())
        rows.append(
            {
                "name": f"{m} fourier features, {name} error %",
                "value": err,
                "expect": f"{expected[name]} +- 0.4",
                "pass": abs(err - expected[name]) <= 0.4,
                "seconds": time.perf_counter() - tic,
            }
        )

    run("linear", lambda: generalized_least_squares(
        Ftr, tr.Y, make_link("identity"), n_iter=1, ridge=1e-6)[0])
    run("logistic", lambda: generalized_least_squares(
        Ftr, tr.Y, make_link("softmax"), n_iter=args.iters, ridge=1e-6)[0])
    run("calibrated", lambda: calibrated_least_squares(
        Ftr, tr.Y, n_iter=30, ridge=1e-6)[0])
    return rows


_BENCH_SUITES = {
    "rate-bounds": _bench_rate_bounds,
    "conditioning": _bench_conditioning,
    "mnist-raw": _bench_mnist_raw,
    "mnist-rff": _bench_mnist_rff,
}


def cmd_bench(args: argparse.Namespace) -> int:
    rows = _BENCH_SUITES[args.suite](args)
    _bench_rows_print(rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"bench-{args.suite}.json")
        with open(path, "wt", encoding="utf-8") as f:
            json.dump({"suite": args.suite, "rows": rows}, f, indent=1, sort_keys=True)
            f.write("\n")
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# parser plumbing


def _add_data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default="synthetic",
                   help="'synthetic', 'mnist', or a path (glmd/libsvm/idx)")
    p.add_argument("--data-format", default="auto",
                   choices=["auto", "glmd", "libsvm", "idx"])
    p.add_argument("--data-dir", default=None, help="directory with MNIST IDX files")
    p.add_argument("--labels", default=None, help="IDX label file (with --data-format idx)")
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--synth", default="n=500,d=10,k=5,link=softmax,noise=multinomial",
                   help="synthetic spec, e.g. n=500,d=10,k=5,link=softmax,spectrum=1e-6:1")
    p.add_argument("--log-tf", action="store_true", help="apply log(1+count)")
    p.add_argument("--prune", type=float, default=None,
                   help="drop columns with fewer total train occurrences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glmls",
        description="Multiclass GLM training by iterated least squares",
    )
    parser.add_argument("--config", default=None,
                        help="key=value config file; explicit flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write model + trace")
    _add_data_options(p)
    p.add_argument("--algo", default="gls",
                   choices=["gls", "gd", "calibrated", "stagewise"])
    p.add_argument("--link", default="logistic",
                   choices=["identity", "logistic", "softmax"])
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--lipschitz", type=float, default=None)
    p.add_argument("--step", type=float, default=None,
                   help="fixed step size for --algo gd (default: automatic)")
    p.add_argument("--basis-degree", type=int, default=3)
    p.add_argument("--generator", default="rff",
                   choices=["rff", "subset-random", "subset-gradient", "identity"])
    p.add_argument("--block", type=int, default=512)
    p.add_argument("--stages", type=int, default=10)
    p.add_argument("--inner", default="linear",
                   choices=["linear", "logistic", "calibrated-linear"])
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--pca", type=int, default=None)
    p.add_argument("--rff", type=int, default=None)
    p.add_argument("--bandwidth", default="median")
    p.add_argument("--early-stop", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="classification error of a saved model")
    _add_data_options(p)
    p.add_argument("--model", required=True, help="model.npz written by train")
    p.set_defaults(func=cmd_eval, split="test")

    p = sub.add_parser("spectrum", help="top singular values and spread proxy")
    _add_data_options(p)
    p.add_argument("--top-r", type=int, default=1000)
    p.add_argument("--max-rows", type=int, default=10000)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("bench", help="canned solver comparisons")
    p.add_argument("suite", choices=sorted(_BENCH_SUITES))
    p.add_argument("--data-dir", default=None)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--rff", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()

    # A config file contributes defaults; anything typed explicitly wins
    # because argparse keeps the last occurrence of a repeated flag.
    if "--config" in argv:
        i = argv.index("--config")
        if i + 1 >= len(argv):
            parser.error("--config needs a path")
        if i == 0:
            parser.error("--config must follow a subcommand")
        try:
            file_args = read_config_file(argv[i + 1])
        except (OSError, DataFormatError) as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        rest = argv[1:i] + argv[i + 2 :]
        argv = [argv[0]] + file_args + rest

    args = parser.parse_args(argv)

    def run() -> int:
        return args.func(args)

    try:
        threads = getattr(args, "threads", None)
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                return run()
        return run()
    except (DataFormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
