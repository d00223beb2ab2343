"""Experiment runners and command-line interface.

Experiment 1 measures classification accuracy against encoding time for
each (algorithm, iteration budget) cell on a train/test image split;
budget-1 cells for the proximal algorithms use the closed-form one-step
encoders.  Experiment 2 measures mean reconstruction error against time
on a sample of whitened patches, running ADMM at both its configured rho
and rho = 1.  Both experiments share one persisted codebook artifact,
verified by checksum.  Results go to CSV (canonical) plus a JSON mirror
with extra bookkeeping (setup seconds, divergence flags).

The JSON config schema is documented in the README; every parameter has
a default, so a minimal config only names the dataset files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import SparseCodingProblem, TERMINATION_DIVERGED, \
    mean_reconstruction_error
from .onestep import ADMM_ONESTEP, FISTA_SCALED, SOFT_THRESHOLD, \
    TRIANGLE, TRIANGLE_SQUARED, OneStepEncoder, encode_triangle, \
    encode_triangle_squared
from .pipeline import Codebook, ImageSet, WhiteningTransform, \
    ArtifactFormatError, apply_whitening, encode_images, evaluate, \
    extract_patches, fit_whitening, load_artifact, normalize_patches, \
    save_artifact, select_l2_penalty, train_classifier, train_codebook, \
    DEFAULT_EPS_NORM, DEFAULT_EPS_ZCA
from .solvers import ADMM, BLASSO, FISTA, SPARSA, SolverConfig, \
    SolverEncoder, solve

__all__ = [
    "ConfigError",
    "CifarFormatError",
    "AlgorithmSpec",
    "ExperimentConfig",
    "ResultRow",
    "load_cifar10",
    "ensure_codebook",
    "run_experiment1",
    "run_experiment2",
    "cli",
    "main",
]

RECORD_BYTES = 3073
DEFAULT_PENALTY_GRID = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2)

# Per-algorithm defaults for (lambda, rho, epsilon).
ALGORITHM_DEFAULTS = {
    FISTA: {"lam": 0.1},
    SPARSA: {"lam": 0.1},
    ADMM: {"lam": 0.02, "rho": 30.0},
    BLASSO: {"epsilon": 0.25},
}
DEFAULT_BUDGETS = {
    FISTA: (1, 5, 10, 50, 100),
    SPARSA: (1, 5, 10, 50, 100),
    ADMM: (1, 5, 10, 50, 100),
    BLASSO: (10, 50, 200, 500),
}


class ConfigError(ValueError):
    """Experiment configuration is missing or malformed."""


class CifarFormatError(ValueError):
    """CIFAR-10 binary input violates the published byte layout."""


# ---------------------------------------------------------------------------
# Data loading


def load_cifar10(path, count: int | None = None,
                 seed: int | None = None) -> ImageSet:
    """Parse CIFAR-10 binary batch files into an ImageSet.

    ``path`` may be one file, a directory (all data_batch_*.bin, else all
    *.bin, in sorted order), or a sequence of files.  Records are 3073
    bytes: a label byte in [0, 9] followed by 1024 red, 1024 green and
    1024 blue bytes, each plane row-major 32x32.  With ``count`` the
    images are subsampled without replacement using ``seed``.
    """
    files = _resolve_cifar_files(path)
    images, labels = [], []
    for f in files:
        raw = np.fromfile(f, dtype=np.uint8)
        if raw.size % RECORD_BYTES != 0:
            offset = (raw.size // RECORD_BYTES) * RECORD_BYTES
            raise CifarFormatError(
                f"{f}: truncated record at byte offset {offset} "
                f"(file has {raw.size} bytes, records are {RECORD_BYTES})")
        if raw.size == 0:
            raise CifarFormatError(f"{f}: empty file")
        records = raw.reshape(-1, RECORD_BYTES)
        lab = records[:, 0]
        bad = np.nonzero(lab > 9)[0]
        if bad.size:
            raise CifarFormatError(
                f"{f}: label {int(lab[bad[0]])} > 9 in record {int(bad[0])} "
                f"(byte offset {int(bad[0]) * RECORD_BYTES})")
        planes = records[:, 1:].reshape(-1, 3, 32, 32)
        images.append(planes.transpose(0, 2, 3, 1))
        labels.append(lab)
    images = np.concatenate(images)
    labels = np.concatenate(labels).astype(np.int64)
    if count is not None:
        if count > images.shape[0]:
            raise ConfigError(
                f"requested {count} images but only {images.shape[0]} available")
        idx = np.random.default_rng(seed).choice(images.shape[0], size=count,
                                                 replace=False)
        images, labels = images[idx], labels[idx]
    return ImageSet(images=images, labels=labels)


def _resolve_cifar_files(path):
    if isinstance(path, (list, tuple)):
        files = [Path(p) for p in path]
    else:
        p = Path(path)
        if p.is_dir():
            files = sorted(p.glob("data_batch_*.bin")) or sorted(p.glob("*.bin"))
            if not files:
                raise FileNotFoundError(f"no .bin files under {p}")
        else:
            files = [p]
    for f in files:
        if not f.is_file():
            raise FileNotFoundError(f"dataset file not found: {f}")
    return files


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class AlgorithmSpec:
    """One algorithm entry of the experiment sweep."""

    name: str
    budgets: tuple
    lam: float = 0.0
    rho: float | None = None
    epsilon: float | None = None

    def __post_init__(self):
        self.name = self.name.lower()
        if self.name not in (FISTA, SPARSA, ADMM, BLASSO):
            raise ConfigError(f"unknown algorithm {self.name!r}")
        self.budgets = tuple(int(b) for b in self.budgets)
        if not self.budgets:
            raise ConfigError(f"{self.name}: budgets must be non-empty")
        if any(b < 1 for b in self.budgets):
            raise ConfigError(f"{self.name}: budgets must be positive")
        if any(b2 <= b1 for b1, b2 in zip(self.budgets, self.budgets[1:])):
            raise ConfigError(f"{self.name}: budgets must be strictly increasing")
        if self.name == ADMM and (self.rho is None or self.rho <= 0):
            raise ConfigError("admm entry requires rho > 0")
        if self.name == BLASSO and (self.epsilon is None or self.epsilon <= 0):
            raise ConfigError("blasso entry requires epsilon > 0")

    def solver_config(self, budget: int, convergence_tol: float) -> SolverConfig:
        return SolverConfig(
            algorithm=self.name,
            max_iterations=budget,
            rho=self.rho if self.name == ADMM else None,
            epsilon=self.epsilon if self.name == BLASSO else None,
            convergence_tol=convergence_tol,
            trace_every=0,
        )


@dataclass
class ExperimentConfig:
    dataset_root: Path
    train_files: tuple
    test_files: tuple
    train_count: int = 5000
    test_count: int = 2000
    library_patches: int = 100_000
    reconstruction_patches: int = 10_000
    k: int = 200
    kmeans_iterations: int = 20
    patch_size: int = 6
    eps_norm: float = DEFAULT_EPS_NORM
    eps_zca: float = DEFAULT_EPS_ZCA
    seed: int = 0
    non_negative: bool = True
    convergence_tol: float = 1e-6
    algorithms: tuple = ()
    penalty_grid: tuple = DEFAULT_PENALTY_GRID
    holdout_fraction: float = 0.2
    timing_runs: int = 1
    output_dir: Path = Path("out")

    def __post_init__(self):
        if not self.train_files or not self.test_files:
            raise ConfigError("dataset train/test file lists must be non-empty")
        if not self.algorithms:
            raise ConfigError("at least one algorithm entry is required")
        if self.timing_runs < 1:
            raise ConfigError("timing_runs must be at least 1")

    # Deterministic per-stage seeds derived from the master seed.
    @property
    def seeds(self) -> dict:
        base = int(self.seed)
        names = ("train_subset", "test_subset", "library", "kmeans",
                 "holdout", "reconstruction")
        return {name: base + i + 1 for i, name in enumerate(names)}

    def train_paths(self):
        return [self.dataset_root / f for f in self.train_files]

    def test_paths(self):
        return [self.dataset_root / f for f in self.test_files]


def config_from_dict(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    try:
        dataset = raw["dataset"]
        root = Path(dataset.get("root", "."))
        if not root.is_absolute():
            root = base_dir / root
        subsets = raw.get("subsets", {})
        codebook = raw.get("codebook", {})
        encoding = raw.get("encoding", {})
        classifier = raw.get("classifier", {})
        algorithms = []
        for entry in raw.get("algorithms", []):
            name = entry["name"].lower()
            defaults = ALGORITHM_DEFAULTS.get(name, {})
            algorithms.append(AlgorithmSpec(
                name=name,
                budgets=tuple(entry.get("budgets", DEFAULT_BUDGETS.get(name, (1,)))),
                lam=float(entry.get("lambda", defaults.get("lam", 0.0))),
                rho=entry.get("rho", defaults.get("rho")),
                epsilon=entry.get("epsilon", defaults.get("epsilon")),
            ))
        out = Path(raw.get("output_dir", "out"))
        if not out.is_absolute():
            out = base_dir / out
        return ExperimentConfig(
            dataset_root=root,
            train_files=tuple(dataset["train"]),
            test_files=tuple(dataset["test"]),
            train_count=int(subsets.get("train", 5000)),
            test_count=int(subsets.get("test", 2000)),
            library_patches=int(subsets.get("library_patches", 100_000)),
            reconstruction_patches=int(subsets.get("reconstruction_patches",
                                                   10_000)),
            k=int(codebook.get("k", 200)),
            kmeans_iterations=int(codebook.get("kmeans_iterations", 20)),
            patch_size=int(codebook.get("patch_size", 6)),
            eps_norm=float(codebook.get("eps_norm", DEFAULT_EPS_NORM)),
            eps_zca=float(codebook.get("eps_zca", DEFAULT_EPS_ZCA)),
            seed=int(raw.get("seed", 0)),
            non_negative=bool(encoding.get("non_negative", True)),
            convergence_tol=float(encoding.get("convergence_tol", 1e-6)),
            algorithms=tuple(algorithms),
            penalty_grid=tuple(classifier.get("penalty_grid",
                                              DEFAULT_PENALTY_GRID)),
            holdout_fraction=float(classifier.get("holdout_fraction", 0.2)),
            timing_runs=int(raw.get("timing_runs", 1)),
            output_dir=out,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Result rows and serialization


@dataclass
class ResultRow:
    algorithm: str
    budget: int
    encode_seconds: float
    setup_seconds: float
    metric_name: str
    metric_value: float
    lam: float | None = None
    rho: float | None = None
    epsilon: float | None = None
    status: str = "ok"


def _fmt(value) -> str:
    if value is None:
        return ""
    return "%.17g" % value


def write_rows_csv(path, rows, metric_name: str):
    lines = [f"algorithm,budget,encode_seconds,{metric_name},lambda,rho,epsilon"]
    for r in rows:
        lines.append(",".join([
            r.algorithm, str(r.budget), _fmt(r.encode_seconds),
            _fmt(r.metric_value), _fmt(r.lam), _fmt(r.rho), _fmt(r.epsilon),
        ]))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def write_rows_json(path, rows, metric_name: str, extra: dict | None = None):
    payload = {"metric": metric_name, "rows": []}
    if extra:
        payload.update(extra)
    for r in rows:
        payload["rows"].append({
            "algorithm": r.algorithm, "budget": r.budget,
            "encode_seconds": r.encode_seconds,
            "setup_seconds": r.setup_seconds,
            metric_name: r.metric_value,
            "lambda": r.lam, "rho": r.rho, "epsilon": r.epsilon,
            "status": r.status,
        })
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Codebook lifecycle


def ensure_codebook(config: ExperimentConfig):
    """Load the shared codebook artifact, training and persisting it first
    if absent.  A checksum sidecar guards against the two experiments
    silently consuming different dictionaries."""
    config.output_dir.mkdir(parents=True, exist_ok=True)
    artifact = config.output_dir / "codebook.pxc"
    sidecar = config.output_dir / "codebook.pxc.sha256"
    if artifact.exists():
        digest = _sha256(artifact)
        if sidecar.exists() and sidecar.read_text().strip() != digest:
            raise ArtifactFormatError(
                f"{artifact}: checksum mismatch against {sidecar}")
        whitening, codebook = load_artifact(artifact)
        return whitening, codebook, artifact
    seeds = config.seeds
    train = load_cifar10(config.train_paths(), config.train_count,
                         seeds["train_subset"])
    library = extract_patches(train, patch_size=config.patch_size,
                              limit=config.library_patches,
                              seed=seeds["library"])
    library = normalize_patches(library, config.eps_norm)
    whitening = fit_whitening(library, config.eps_zca)
    whitened = apply_whitening(whitening, library)
    codebook = train_codebook(whitened, config.k, config.kmeans_iterations,
                              seeds["kmeans"])
    save_artifact(artifact, whitening, codebook)
    sidecar.write_text(_sha256(artifact) + "\n")
    return whitening, codebook, artifact


# ---------------------------------------------------------------------------
# Experiment 1: accuracy vs. encode time

ONESTEP_KIND = {FISTA: FISTA_SCALED, SPARSA: SOFT_THRESHOLD,
                ADMM: ADMM_ONESTEP}


def _build_encoder(spec: AlgorithmSpec, budget: int,
                   config: ExperimentConfig, codebook: Codebook):
    """Return (encoder, setup_seconds).  Budget-1 proximal cells use the
    closed-form one-step encoders; everything else runs the solver."""
    start = time.perf_counter()
    if budget == 1 and spec.name in ONESTEP_KIND:
        kind = ONESTEP_KIND[spec.name]
        encoder = OneStepEncoder(kind, codebook.dictionary, lam=spec.lam,
                                 rho=spec.rho if spec.name == ADMM else None,
                                 non_negative=config.non_negative)
        if kind == FISTA_SCALED:
            _ = codebook.dictionary.lipschitz  # charge L to setup, not encode
    else:
        encoder = SolverEncoder(codebook.dictionary, spec.lam,
                                spec.solver_config(budget,
                                                   config.convergence_tol),
                                non_negative=config.non_negative)
    return encoder, time.perf_counter() - start


def _encode_sets(encoder, sets, codebook, whitening, config):
    """Encode image sets, separating solver setup from encode time."""
    best = None
    for _ in range(config.timing_runs):
        setup_before = getattr(encoder, "setup_seconds_total", 0.0)
        start = time.perf_counter()
        feats = [encode_images(s, codebook, whitening, encoder,
                               config.eps_norm) for s in sets]
        wall = time.perf_counter() - start
        setup = getattr(encoder, "setup_seconds_total", 0.0) - setup_before
        if best is None or wall - setup < best[1]:
            best = (feats, wall - setup, setup)
    return best


def run_experiment1(config: ExperimentConfig):
    """Accuracy vs. encoding time for every (algorithm, budget) cell.

    Writes experiment1.csv / experiment1.json under the output directory
    and returns the rows.
    """
    whitening, codebook, artifact = ensure_codebook(config)
    seeds = config.seeds
    train = load_cifar10(config.train_paths(), config.train_count,
                         seeds["train_subset"])
    test = load_cifar10(config.test_paths(), config.test_count,
                        seeds["test_subset"])
    rows = []
    for spec in config.algorithms:
        for budget in spec.budgets:
            encoder, build_s = _build_encoder(spec, budget, config, codebook)
            (train_feats, test_feats), encode_s, solve_setup = _encode_sets(
                encoder, [train, test], codebook, whitening, config)
            penalty = select_l2_penalty(train_feats, train.labels,
                                        config.penalty_grid,
                                        config.holdout_fraction,
                                        seeds["holdout"])
            clf = train_classifier(train_feats, train.labels, penalty)
            acc = evaluate(clf, test_feats, test.labels)
            diverged = getattr(encoder, "diverged_count", 0) > 0
            rows.append(ResultRow(
                algorithm=spec.name, budget=budget,
                encode_seconds=encode_s, setup_seconds=build_s + solve_setup,
                metric_name="accuracy", metric_value=acc,
                lam=spec.lam, rho=spec.rho, epsilon=spec.epsilon,
                status="diverged" if diverged else "ok"))
    write_rows_csv(config.output_dir / "experiment1.csv", rows, "accuracy")
    write_rows_json(config.output_dir / "experiment1.json", rows, "accuracy",
                    extra={"codebook_sha256": _sha256(artifact)})
    return rows


# ---------------------------------------------------------------------------
# Experiment 2: reconstruction error vs. time


def _exp2_algorithms(config: ExperimentConfig):
    """Experiment 2 runs every configured algorithm and adds a rho = 1
    contrast for each ADMM entry."""
    specs = list(config.algorithms)
    for spec in config.algorithms:
        if spec.name == ADMM and spec.rho != 1.0:
            specs.append(replace(spec, rho=1.0))
    return specs


def run_experiment2(config: ExperimentConfig):
    """Mean reconstruction error vs. time on sampled whitened patches."""
    whitening, codebook, artifact = ensure_codebook(config)
    seeds = config.seeds
    train = load_cifar10(config.train_paths(), config.train_count,
                         seeds["train_subset"])
    patches = extract_patches(train, patch_size=config.patch_size,
                              limit=config.reconstruction_patches,
                              seed=seeds["reconstruction"])
    signals = apply_whitening(whitening,
                              normalize_patches(patches, config.eps_norm))
    baseline = float(np.mean(np.linalg.norm(signals.data, axis=0)))
    rows = [ResultRow(algorithm="zero", budget=0, encode_seconds=0.0,
                      setup_seconds=0.0,
                      metric_name="mean_reconstruction_error",
                      metric_value=baseline)]
    for spec in _exp2_algorithms(config):
        problem = SparseCodingProblem(codebook.dictionary, signals,
                                      spec.lam, config.non_negative)
        for budget in spec.budgets:
            best = None
            for _ in range(config.timing_runs):
                start = time.perf_counter()
                codes, trace = solve(problem,
                                     spec.solver_config(budget,
                                                        config.convergence_tol))
                wall = time.perf_counter() - start
                if best is None or wall - trace.setup_seconds < best[1]:
                    best = (codes, wall - trace.setup_seconds,
                            trace.setup_seconds, trace)
            codes, encode_s, setup_s, trace = best
            err = mean_reconstruction_error(codebook.dictionary, codes, signals)
            rows.append(ResultRow(
                algorithm=spec.name, budget=budget,
                encode_seconds=encode_s, setup_seconds=setup_s,
                metric_name="mean_reconstruction_error", metric_value=err,
                lam=spec.lam, rho=spec.rho, epsilon=spec.epsilon,
                status="diverged" if trace.termination == TERMINATION_DIVERGED
                else "ok"))
    write_rows_csv(config.output_dir / "experiment2.csv", rows,
                   "mean_reconstruction_error")
    write_rows_json(config.output_dir / "experiment2.json", rows,
                    "mean_reconstruction_error",
                    extra={"codebook_sha256": _sha256(artifact)})
    return rows


# ---------------------------------------------------------------------------
# CLI


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsecode",
        description="Sparse coding benchmark runner")
    sub = parser.add_subparsers(dest="command")

    p_dict = sub.add_parser("train-dict", help="train and persist a codebook")
    p_exp1 = sub.add_parser("exp1", help="accuracy vs. encode time sweep")
    p_exp2 = sub.add_parser("exp2", help="reconstruction error vs. time sweep")
    for p in (p_dict, p_exp1, p_exp2):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config master seed")
        p.add_argument("--out", default=None, help="override output directory")

    p_enc = sub.add_parser("encode", help="encode patches or one image")
    p_enc.add_argument("--artifact", required=True,
                       help="codebook artifact (.pxc)")
    p_enc.add_argument("--patches", help="npy file of raw patch columns (n x m)")
    p_enc.add_argument("--cifar", help="CIFAR-10 .bin file to take an image from")
    p_enc.add_argument("--index", type=int, default=0,
                       help="image index within --cifar")
    p_enc.add_argument("--method", default="soft_threshold",
                       choices=["soft_threshold", "fista", "sparsa", "admm",
                                "blasso", "triangle", "triangle_squared"])
    p_enc.add_argument("--budget", type=int, default=1)
    p_enc.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p_enc.add_argument("--rho", type=float, default=30.0)
    p_enc.add_argument("--epsilon", type=float, default=0.25)
    p_enc.add_argument("--eps-norm", type=float, default=DEFAULT_EPS_NORM)
    p_enc.add_argument("--signed", action="store_true",
                       help="use signed codes instead of non-negative")
    p_enc.add_argument("--out", default="codes.npy")

    p_sol = sub.add_parser("solve", help="solve an ad-hoc problem from a file")
    p_sol.add_argument("--problem", required=True,
                       help="npz file with arrays W (n x K) and X (n x m)")
    p_sol.add_argument("--algorithm", default="fista",
                       choices=["fista", "sparsa", "admm", "blasso"])
    p_sol.add_argument("--budget", type=int, default=100)
    p_sol.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p_sol.add_argument("--rho", type=float, default=1.0)
    p_sol.add_argument("--epsilon", type=float, default=0.01)
    p_sol.add_argument("--tol", type=float, default=1e-6)
    p_sol.add_argument("--non-negative", action="store_true")
    return parser


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, output_dir=Path(args.out))
    return config


def _cmd_train_dict(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    whitening, codebook, artifact = ensure_codebook(config)
    print(f"codebook: {artifact}")
    print(f"sha256: {_sha256(artifact)}")
    print(f"atoms: {codebook.dictionary.n} x {codebook.dictionary.k}")
    return 0


def _cmd_exp(args, runner) -> int:
    config = _apply_overrides(load_config(args.config), args)
    rows = runner(config)
    print(f"wrote {len(rows)} rows to {config.output_dir}")
    return 0


def _cmd_encode(args) -> int:
    whitening, codebook = load_artifact(args.artifact)
    if (args.patches is None) == (args.cifar is None):
        raise ConfigError("encode needs exactly one of --patches or --cifar")
    if args.patches is not None:
        raw = np.load(args.patches)
        from .core import SignalBatch

        batch = SignalBatch(raw)
    else:
        images = load_cifar10(args.cifar)
        if not 0 <= args.index < len(images):
            raise ConfigError(f"--index {args.index} out of range")
        batch = extract_patches(images.images[args.index])
    signals = apply_whitening(whitening,
                              normalize_patches(batch, args.eps_norm))
    non_negative = not args.signed
    method = args.method
    if method in ("triangle", "triangle_squared"):
        codes = (encode_triangle if method == "triangle"
                 else encode_triangle_squared)(codebook.dictionary, signals)
    elif args.budget == 1 and method in ("soft_threshold", "fista", "sparsa",
                                         "admm"):
        kind = {"soft_threshold": SOFT_THRESHOLD, "sparsa": SOFT_THRESHOLD,
                "fista": FISTA_SCALED, "admm": ADMM_ONESTEP}[method]
        encoder = OneStepEncoder(kind, codebook.dictionary, lam=args.lam,
                                 rho=args.rho if kind == ADMM_ONESTEP else None,
                                 non_negative=non_negative)
        codes = encoder.encode(signals)
    else:
        if method == "soft_threshold":
            raise ConfigError("soft_threshold is budget-1 only")
        spec = SolverConfig(algorithm=method, max_iterations=args.budget,
                            rho=args.rho if method == "admm" else None,
                            epsilon=args.epsilon if method == "blasso" else None,
                            trace_every=0)
        problem = SparseCodingProblem(codebook.dictionary, signals, args.lam,
                                      non_negative)
        codes, _ = solve(problem, spec)
    np.save(args.out, codes.data)
    nnz = float(np.mean(np.count_nonzero(codes.data, axis=0)))
    print(f"wrote {codes.data.shape[0]} x {codes.data.shape[1]} codes "
          f"to {args.out} (mean nnz/column {nnz:.1f})")
    return 0


def _cmd_solve(args) -> int:
    try:
        data = np.load(args.problem)
    except OSError as exc:
        raise CifarFormatError(f"cannot read problem file: {exc}") from exc
    if "W" not in data or "X" not in data:
        raise CifarFormatError(f"{args.problem}: needs arrays 'W' and 'X'")
    problem = SparseCodingProblem(data["W"], data["X"], args.lam,
                                  args.non_negative)
    spec = SolverConfig(algorithm=args.algorithm, max_iterations=args.budget,
                        rho=args.rho if args.algorithm == "admm" else None,
                        epsilon=args.epsilon if args.algorithm == "blasso"
                        else None,
                        convergence_tol=args.tol)
    codes, trace = solve(problem, spec)
    print(f"setup_seconds {trace.setup_seconds:.6f}")
    print("iteration objective mean_reconstruction_error seconds")
    for rec in trace.records:
        print(f"{rec.iteration} {_fmt(rec.objective)} "
              f"{_fmt(rec.reconstruction_error)} {rec.seconds:.6f}")
    print(f"termination {trace.termination}")
    if trace.termination == TERMINATION_DIVERGED:
        return 4
    return 0


def cli(argv=None) -> int:
    """Run the command line; returns the process exit code.

    0 success, 2 usage/config error, 3 data-format error, 4 numerical
    divergence in an ad-hoc solve.
    """
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.command == "train-dict":
            return _cmd_train_dict(args)
        if args.command == "exp1":
            return _cmd_exp(args, run_experiment1)
        if args.command == "exp2":
            return _cmd_exp(args, run_experiment2)
        if args.command == "encode":
            return _cmd_encode(args)
        if args.command == "solve":
            return _cmd_solve(args)
        parser.print_usage(sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CifarFormatError, ArtifactFormatError) as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli())
