"""Sequential test-generation loop, baselines, persistence and aggregation.

Randomness: every random draw in a run comes from a generator seeded with
``child_seed(run_seed, iteration, purpose)`` (see ``acquisition.child_seed``),
so a run resumed from its log makes exactly the same draws as one that was
never interrupted.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import objective as objm
from . import preference as prefm
from .acquisition import (
    AcquisitionConfig,
    AcquisitionMode,
    child_seed,
    propose_pair,
    propose_pair_single_gp,
)
from .benchmarks import Benchmark, BenchmarkId, get_benchmark
from .errors import ConfigError, ContractViolation, OracleError
from .kernels import KernelFamily, KernelSpec
from .metrics import MetricWeights, coverage_score, preference_scores
from .oracle import (
    EndpointConfig,
    InteractiveOracle,
    LLMOracle,
    OracleLog,
    SyntheticOracle,
    SyntheticOracleSpec,
)

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    HVGP_FULL = "HVGP_Full"
    HVGP_MI_ONLY = "HVGP_MI_only"
    HVGP_PREF_ONLY = "HVGP_Pref_only"
    SINGLE_GP = "SingleGP"
    RANDOM = "Random"

    @property
    def acquisition_mode(self) -> AcquisitionMode:
        return {
            Method.HVGP_FULL: AcquisitionMode.FULL,
            Method.HVGP_MI_ONLY: AcquisitionMode.MI_ONLY,
            Method.HVGP_PREF_ONLY: AcquisitionMode.PREF_ONLY,
            Method.SINGLE_GP: AcquisitionMode.FULL,
            Method.RANDOM: AcquisitionMode.RANDOM,
        }[self]


@dataclass
class OracleConfig:
    backend: str = "synthetic"  # synthetic | llm | interactive
    weights: list | None = None  # synthetic; defaults to the benchmark's weights
    lambda_true: float = 0.0
    url: str | None = None
    model: str | None = None
    temperature: float = 0.0
    api_key_env: str = "PREFBED_API_KEY"

    def build(self, bench: Benchmark):
        if self.backend == "synthetic":
            w = self.weights if self.weights is not None else bench.default_weights.weights
            return SyntheticOracle(SyntheticOracleSpec(np.asarray(w, dtype=float), self.lambda_true))
        if self.backend == "llm":
            if not self.url or not self.model:
                raise ConfigError("llm oracle needs 'url' and 'model'")
            return LLMOracle(EndpointConfig(self.url, self.model, self.temperature, self.api_key_env),
                             bench.default_prompt)
        if self.backend == "interactive":
            return InteractiveOracle(bench.default_prompt)
        raise ConfigError(f"unknown oracle backend {self.backend!r}")


@dataclass
class ExperimentConfig:
    benchmark: BenchmarkId = BenchmarkId.FIRE_RESCUE
    methods: list = field(default_factory=lambda: [Method.HVGP_FULL])
    budget: int = 50
    n_init: int = 10
    seeds: list = field(default_factory=lambda: [0])
    oracle: OracleConfig = field(default_factory=OracleConfig)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    gp_mode: str = "Exact"
    inducing_points: int = 32
    eval_weights: list | None = None
    kernel_family: str = "SquaredExponential"
    n_restarts: int = 5
    refit_restarts: int = 3
    snapshots: bool = False

    def __post_init__(self):
        self.benchmark = BenchmarkId(self.benchmark)
        self.methods = [Method(m) for m in self.methods]
        self.gp_mode = objm.GPMode(self.gp_mode).value
        KernelFamily(self.kernel_family)
        if not self.budget >= self.n_init >= 1:
            raise ConfigError(f"need budget >= n_init >= 1, got budget={self.budget}, n_init={self.n_init}")

    @property
    def bench(self) -> Benchmark:
        return get_benchmark(self.benchmark)

    @property
    def weights(self) -> MetricWeights:
        if self.eval_weights is not None:
            return MetricWeights(self.eval_weights)
        if self.oracle.backend == "synthetic" and self.oracle.weights is not None:
            return MetricWeights(self.oracle.weights)
        return self.bench.default_weights

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Build from a plain mapping (e.g. parsed YAML); unknown keys are a ConfigError."""
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        d = dict(d)
        _check_keys(d, cls.__dataclass_fields__, "")
        try:
            if "oracle" in d:
                sub = d["oracle"] or {}
                _check_keys(sub, OracleConfig.__dataclass_fields__, "oracle.")
                d["oracle"] = OracleConfig(**sub)
            if "acquisition" in d:
                sub = d["acquisition"] or {}
                _check_keys(sub, AcquisitionConfig.__dataclass_fields__, "acquisition.")
                d["acquisition"] = AcquisitionConfig(**sub)
            for key in ("methods", "seeds"):
                if key in d and not isinstance(d[key], list):
                    d[key] = [d[key]]
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["benchmark"] = self.benchmark.value
        d["methods"] = [m.value for m in self.methods]
        d["acquisition"]["mode"] = self.acquisition.mode.value
        return d


def _check_keys(d, allowed, prefix: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"'{prefix.rstrip('.')}' must be a mapping")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown configuration key '{prefix}{unknown[0]}'", key=prefix + unknown[0])


@dataclass
class RunRecord:
    iter: int
    seed: int
    benchmark: str
    method: str
    x1: list
    x2: list
    y1: list
    y2: list
    verdict: int
    pref_score_x1: float
    pref_score_x2: float
    best_pref_so_far: float
    coverage_so_far: float
    wall_ms: float = 0.0

    def to_json(self) -> str:
        """Canonical log line; wall-clock time is kept out so logs are reproducible."""
        d = asdict(self)
        d.pop("wall_ms")
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _rng(seed: int, iteration: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(child_seed(int(seed), int(iteration), purpose))


def run_path(out_dir, cfg: ExperimentConfig, method: Method, seed: int) -> Path:
    return Path(out_dir) / f"{cfg.benchmark.value}_{method.value}_{seed}.jsonl"


@dataclass
class _State:
    X: list = field(default_factory=list)
    Y: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    best: float = -np.inf
    obj_kernels: list | None = None
    pref_kernel: KernelSpec | None = None
    last_models: dict = field(default_factory=dict)

    def add(self, rec: RunRecord) -> None:
        self.X += [rec.x1, rec.x2]
        self.Y += [rec.y1, rec.y2]
        self.pairs.append((rec.y1, rec.y2))
        self.verdicts.append(rec.verdict)
        self.best = max(self.best, rec.pref_score_x1, rec.pref_score_x2)


def _fit_objective(cfg: ExperimentConfig, bench: Benchmark, st: _State, seed: int, it: int):
    data = objm.ObjectiveDataset.with_bounds(np.array(st.X), np.array(st.Y),
                                             bench.space.lower, bench.space.upper)
    d = bench.space.dim
    if st.obj_kernels is None:
        init = KernelSpec.default(d, cfg.kernel_family, lengthscale=0.5, noise_variance=1e-3)
        restarts = cfg.n_restarts
    else:
        init = st.obj_kernels
        restarts = cfg.refit_restarts
    opt = objm.OptConfig(n_restarts=restarts, seed=child_seed(seed, it, "objective-fit") % 2**32)
    if cfg.gp_mode == objm.GPMode.SPARSE_VARIATIONAL.value:
        m = min(cfg.inducing_points, data.n)
        model = objm.fit_svgp(data, m, init, opt)
    else:
        model = objm.fit_exact(data, init, opt)
    st.obj_kernels = model.kernels
    return model


# Comparison-noise grid used inside the loop: the upper part of the preference
# module's grid. Below 0.1 the utility scale (measured in units of lambda by the
# acquisition) explodes while the Laplace approximation is at its least accurate.
LOOP_LAMBDA_GRID = (0.1, 0.316, 1.0)


def _fit_preference(items_pairs, verdicts, dim, family) -> prefm.PreferenceModel:
    data = prefm.PreferenceDataset.from_pairs(items_pairs, verdicts)
    grid = tuple(v * np.sqrt(dim) for v in prefm.LENGTHSCALE_GRID)
    if not data.duels:
        return prefm.PreferenceModel.prior(dim, KernelSpec.default(dim, family))
    return prefm.fit_laplace(data, KernelSpec.default(dim, family),
                             lambda_grid=LOOP_LAMBDA_GRID, lengthscale_grid=grid)


def _propose(cfg, method, bench, st, seed, it):
    rng = _rng(seed, it, "propose")
    if it < cfg.n_init or method is Method.RANDOM:
        return propose_pair(None, None, bench.space, AcquisitionConfig(mode="Random"), rng)
    acq = AcquisitionConfig(**{**asdict(cfg.acquisition), "mode": method.acquisition_mode})
    if method is Method.SINGLE_GP:
        pairs = [(st.X[2 * i], st.X[2 * i + 1]) for i in range(len(st.verdicts))]
        pref = _fit_preference(pairs, st.verdicts, bench.space.dim, cfg.kernel_family)
        st.last_models = {"preference": pref}
        return propose_pair_single_gp(pref, bench.space, acq, rng)
    obj = _fit_objective(cfg, bench, st, seed, it)
    pref = _fit_preference(st.pairs, st.verdicts, bench.output_dim, cfg.kernel_family)
    st.last_models = {"objective": obj, "preference": pref}
    return propose_pair(obj, pref, bench.space, acq, rng)


def _write_snapshot(snapshot_dir, it: int, models: dict) -> None:
    if not models:
        return
    doc = {}
    if "objective" in models:
        doc["objective"] = objm.model_to_dict(models["objective"])
    doc["preference"] = prefm.model_to_dict(models["preference"])
    path = Path(snapshot_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / f"iter_{it:04d}.json").write_text(json.dumps(doc))


def _state_path(path: Path) -> Path:
    return path.with_suffix(".state.json")


def load_records(path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(RunRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, KeyError) as exc:
                raise ContractViolation(f"{path}:{lineno}: malformed record ({exc})") from exc
    return out


def run_bed(cfg: ExperimentConfig, seed: int, method: Method | str | None = None, *,
            oracle=None, resume_from: list | None = None, log_path=None,
            state_path=None, snapshot_dir=None) -> Iterator[RunRecord]:
    """Yield one record per oracle query until the budget is spent.

    ``resume_from`` holds records of an interrupted run; their pairs and
    verdicts are reused without querying the oracle again. ``state_path``
    (if given) receives the latest fitted hyperparameters after every
    iteration so a resumed run warm-starts identically. With ``snapshot_dir``
    the models fitted in each iteration are written there as JSON documents.
    """
    method = Method(method or cfg.methods[0])
    bench = cfg.bench
    oracle = oracle or cfg.oracle.build(bench)
    weights = cfg.weights
    oracle_log = OracleLog(log_path) if log_path else None
    st = _State()
    done = list(resume_from or [])
    for rec in done:
        st.add(rec)
    if done and state_path and Path(state_path).exists():
        saved = json.loads(Path(state_path).read_text())
        if saved.get("obj_kernels"):
            st.obj_kernels = [KernelSpec.from_dict(k) for k in saved["obj_kernels"]]
    for it in range(len(done), cfg.budget):
        t0 = time.perf_counter()
        st.last_models = {}
        x1, x2 = _propose(cfg, method, bench, st, seed, it)
        if snapshot_dir:
            _write_snapshot(snapshot_dir, it, st.last_models)
        y1, y2 = bench(x1), bench(x2)
        verdict = oracle.compare(y1, y2, _rng(seed, it, "oracle"))
        if oracle_log:
            oracle_log.append(it, y1, y2, verdict, oracle.backend)
        s1, s2 = preference_scores(weights, np.stack([y1, y2]))
        best = max(st.best, float(s1), float(s2))
        cover = coverage_score(np.array(st.X + [x1, x2]))
        rec = RunRecord(it, int(seed), cfg.benchmark.value, method.value,
                        x1.tolist(), x2.tolist(), y1.tolist(), y2.tolist(), int(verdict.choice),
                        float(s1), float(s2), best, cover,
                        (time.perf_counter() - t0) * 1000.0)
        st.add(rec)
        if state_path:
            Path(state_path).write_text(json.dumps({
                "iter": it,
                "obj_kernels": [k.to_dict() for k in st.obj_kernels] if st.obj_kernels else None,
            }))
        yield rec


def run_single_gp(cfg: ExperimentConfig, seed: int, **kwargs) -> Iterator[RunRecord]:
    """Baseline with one preference GP over scenarios (no observable layer)."""
    return run_bed(cfg, seed, Method.SINGLE_GP, **kwargs)


def execute_run(cfg: ExperimentConfig, method, seed: int, out_dir, *, oracle=None,
                resume: bool = True) -> list[RunRecord]:
    """Run (or resume) one (method, seed) and persist its JSON-lines log.

    On an oracle error the records obtained so far stay on disk and the
    error propagates; calling again resumes from them.
    """
    method = Method(method)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = run_path(out_dir, cfg, method, seed)
    done = load_records(path) if resume else []
    if not resume and path.exists():
        path.unlink()
    timing = path.with_suffix(".timing.csv")
    records = list(done)
    gen = run_bed(cfg, seed, method, oracle=oracle, resume_from=done,
                  log_path=path.with_suffix(".oracle.jsonl"), state_path=_state_path(path),
                  snapshot_dir=path.with_suffix(".snapshots") if cfg.snapshots else None)
    with open(path, "a") as fh, open(timing, "a") as tf:
        try:
            for rec in gen:
                fh.write(rec.to_json() + "\n")
                fh.flush()
                tf.write(f"{rec.iter},{rec.wall_ms:.3f}\n")
                records.append(rec)
        except OracleError:
            log.error("oracle failed in %s after %d records; state persisted", path.name, len(records))
            raise
    return records


# --------------------------------------------------------------------------
# aggregation


def aggregate(runs: list[list[RunRecord]]) -> list[dict]:
    """Mean/std (n-1 divisor, 0 for one seed) of best preference and coverage per method and iteration."""
    if not runs:
        raise ContractViolation("need at least one run to aggregate")
    benches = {r.benchmark for run in runs for r in run}
    if len(benches) > 1:
        raise ContractViolation(f"cannot aggregate runs from several benchmarks: {sorted(benches)}")
    table: dict = {}
    for run in runs:
        for r in run:
            table.setdefault((r.method, r.iter), {})[r.seed] = (r.best_pref_so_far, r.coverage_so_far)
    rows = []
    for (method, it) in sorted(table):
        by_seed = table[(method, it)]
        vals = np.array([by_seed[s] for s in sorted(by_seed)])
        std = vals.std(axis=0, ddof=1) if len(vals) > 1 else np.zeros(2)
        rows.append({
            "benchmark": next(iter(benches)), "method": method, "iter": it, "n_seeds": len(vals),
            "best_pref_mean": float(vals[:, 0].mean()), "best_pref_std": float(std[0]),
            "coverage_mean": float(vals[:, 1].mean()), "coverage_std": float(std[1]),
        })
    return rows


def write_aggregate_csv(rows: list[dict], path) -> None:
    fields = ["benchmark", "method", "iter", "n_seeds", "best_pref_mean", "best_pref_std",
              "coverage_mean", "coverage_std"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
