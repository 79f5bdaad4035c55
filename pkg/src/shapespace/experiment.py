"""Experiment specs, corpus directories and the transfer / multi-task runs
behind the command-line interface."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .augment import AugmentedInstance, TransformLog, augment_corpus, policy_presets, salt_pepper, write_transform_log
from .datasets import PSYCH, SKETCHY, TUBERLIN, FoldSchedule, StimulusRecord, assign_folds, load_manifest, write_manifest
from .errors import ConfigError, DataError, DivergenceError, EvaluationError
from .imageio import write_image
from .mds import TargetSpace, classical_mds, normalize_space, read_dissimilarities, read_space, write_dissimilarities, write_space
from .metrics import (mapping_metrics, feature_space_tau, reconstruction_error, silhouette_cosine,
                      zero_baseline_med)
from .model import named_config, network_config
from .regress import BETA_GRID, RegressionProblem, fit_linear, select_beta
from .synthetic import SyntheticConfig, generate_synthetic_corpus
from .train import (LAMBDA_GRID, RotationRun, TaskWeights, batch_plan, build_corpus, predict, run_cross_validation,
                    write_curve)

logger = logging.getLogger(__name__)

TASK_SETS = ({"classify"}, {"reconstruct"}, {"classify", "map"}, {"reconstruct", "map"})
SCALES = {
    "desk": dict(batch_size=32, architecture="desk", epochs=30),
    "paper": dict(batch_size=128, architecture="sketchanet", epochs=200),
}
REFERENCE_DIM = 4
MAX_DIM = 10
SILHOUETTE_NOISE = (0.0, 0.1)

RESULT_COLUMNS = ("configuration", "task", "regressor", "beta_lambda", "tau", "mse", "med", "r2",
                  "relative_med", "stimulus_mse", "validation_mse", "dim", "fold", "selected",
                  "spec_hash", "status")
DETAIL_COLUMNS = ("configuration", "task", "beta_lambda", "dim", "fold", "best_epoch", "tuberlin_accuracy",
                  "sketchy_accuracy", "reconstruction_error", "spec_hash")
SILHOUETTE_COLUMNS = ("configuration", "task", "beta_lambda", "noise_level", "silhouette", "spec_hash")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that determines an experiment's results."""

    config: str = "C_default"
    tasks: Tuple[str, ...] = ("classify",)
    grid: Optional[Tuple[float, ...]] = None
    dims: Tuple[int, ...] = (REFERENCE_DIM,)
    seed: int = 0
    scale: str = "desk"
    epochs: Optional[int] = None
    learning_rate: float = 1e-4
    distance: str = "euclidean"

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(sorted(self.tasks)))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))

    @property
    def multitask(self) -> bool:
        return "map" in self.tasks

    @property
    def secondary(self) -> str:
        return "reconstruct" if "reconstruct" in self.tasks else "classify"

    @property
    def effective_grid(self) -> Tuple[float, ...]:
        if self.grid is not None:
            return self.grid
        return LAMBDA_GRID if self.multitask else BETA_GRID

    @property
    def effective_epochs(self) -> int:
        return SCALES[self.scale]["epochs"] if self.epochs is None else self.epochs

    def validate(self) -> None:
        if set(self.tasks) not in TASK_SETS:
            raise ConfigError(f"unsupported task set {list(self.tasks)}")
        if self.scale not in SCALES:
            raise ConfigError(f"unknown scale {self.scale!r}")
        if self.grid is not None and len(self.grid) == 0:
            raise ConfigError("the beta/lambda grid is empty")
        if self.multitask and any(g <= 0 for g in self.effective_grid):
            raise ConfigError("mapping weights must be positive in multi-task mode")
        if not self.dims or any(not 1 <= d <= MAX_DIM for d in self.dims):
            raise ConfigError(f"target-space dims must lie in [1, {MAX_DIM}]")
        if self.effective_epochs < 1:
            raise ConfigError("at least one epoch is required")
        if self.distance not in ("euclidean", "cosine"):
            raise ConfigError(f"unknown distance {self.distance!r}")
        named = named_config(self.config)
        if "reconstruct" in self.tasks and named.decoder_weight_decay is None:
            raise ConfigError(f"configuration {self.config} has no decoder")

    def to_json(self) -> dict:
        out = asdict(self)
        out["tasks"] = list(self.tasks)
        out["dims"] = list(self.dims)
        out["grid"] = None if self.grid is None else list(self.grid)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown spec fields {sorted(unknown)}")
        obj = dict(obj)
        for key in ("tasks", "dims", "grid"):
            if obj.get(key) is not None:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    def spec_hash(self) -> str:
        text = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def load_spec(path) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        return ExperimentSpec.from_json(json.load(fh))


# -- corpus directories --------------------------------------------------

def space_path(root, dim: int) -> Path:
    return Path(root) / "spaces" / f"space_{dim}.csv"


def synthesize(out_dir, seed: int = 0, config: SyntheticConfig = SyntheticConfig(), k: int = 5) -> List[StimulusRecord]:
    """Write a complete synthetic corpus: images, manifest, dissimilarities and spaces."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "spaces").mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    records, d = generate_synthetic_corpus(config, rng)
    records = assign_folds(records, k, rng)
    for rec in records:
        write_image(out / rec.path, rec.image)
    psych_ids = [r.id for r in records if r.source == PSYCH]
    write_manifest(out / "manifest.jsonl", records)
    write_dissimilarities(out / "dissimilarities.csv", d, psych_ids)
    for dim in range(1, MAX_DIM + 1):
        write_space(space_path(out, dim), normalize_space(classical_mds(d, dim)), psych_ids)
    return records


def write_instances(out_dir, instances: Sequence[AugmentedInstance]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pixels = np.stack([np.round(i.image * 255.0).astype(np.uint8) for i in instances])
    np.savez_compressed(out / "instances.npz", images=pixels)
    write_transform_log(out / "instances.jsonl", instances)


def read_instances(out_dir) -> List[AugmentedInstance]:
    out = Path(out_dir)
    if not (out / "instances.npz").exists():
        raise DataError(f"{out}: no augmented corpus found (run the augment command first)")
    with np.load(out / "instances.npz") as data:
        pixels = data["images"]
    instances = []
    with open(out / "instances.jsonl", encoding="utf-8") as fh:
        for img, line in zip(pixels, fh):
            row = json.loads(line)
            log = TransformLog(row["flipped"], row["rotation"], row["shear"], row["size"], tuple(row["offset"]))
            instances.append(AugmentedInstance(row["id"], img.astype(np.float64) / 255.0, row["origin_id"],
                                               row["source"], row["fold"], log))
    if len(instances) != len(pixels):
        raise DataError(f"{out}: image and metadata counts differ")
    return instances


def augment_directory(data_dir, seed: int = 0, scale: str = "desk", factors=None,
                      out_dir=None) -> List[AugmentedInstance]:
    data = Path(data_dir)
    records = load_manifest(data / "manifest.jsonl")
    instances = augment_corpus(records, policy_presets(scale, factors), seed, root=data)
    write_instances(out_dir or data / "augmented", instances)
    return instances


@dataclass
class ExperimentData:
    records: List[StimulusRecord]
    instances: List[AugmentedInstance]
    psych_ids: List[str]
    dissimilarities: np.ndarray
    spaces: Dict[int, TargetSpace] = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return 1 + max(r.class_label for r in self.records)

    def coords(self, dim: int) -> Dict[str, np.ndarray]:
        space = self.spaces[dim]
        return dict(zip(space.ids, space.coords))


def load_data(data_dir, dims: Sequence[int]) -> ExperimentData:
    data = Path(data_dir)
    records = load_manifest(data / "manifest.jsonl")
    d, ids = read_dissimilarities(data / "dissimilarities.csv")
    spaces = {}
    for dim in dims:
        path = space_path(data, dim)
        if not path.exists():
            raise DataError(f"missing target space for dimension {dim}: {path}")
        spaces[dim] = read_space(path)
    return ExperimentData(records, read_instances(data / "augmented"), ids, d, spaces)


# -- evaluation of trained networks --------------------------------------

def _weighted_mean(values: Sequence[float], weights: Sequence[float]) -> float:
    return float(np.average(np.asarray(values, dtype=np.float64), weights=np.asarray(weights, dtype=np.float64)))


def _stimulus_mse(pred: np.ndarray, truth: np.ndarray, origins: Sequence[str]) -> float:
    origins = np.asarray(origins)
    errs = []
    for o in np.unique(origins):
        mask = origins == o
        errs.append(np.mean((pred[mask].mean(axis=0) - truth[mask][0]) ** 2))
    return float(np.mean(errs))


def _mapping_row(pred, truth, origins) -> Dict[str, float]:
    m = mapping_metrics(pred, truth, baseline_med=zero_baseline_med(truth))
    return dict(mse=m.mse, med=m.med, r2=m.r2, relative_med=m.relative_med,
                stimulus_mse=_stimulus_mse(np.asarray(pred), np.asarray(truth), origins))


def _mean_rows(rows: List[Dict], weights: Sequence[float], template: Dict) -> Dict:
    out = dict(template, fold="mean")
    for key in ("tau", "mse", "med", "r2", "relative_med", "stimulus_mse", "validation_mse"):
        vals = [r.get(key) for r in rows]
        if all(v is not None for v in vals):
            out[key] = _weighted_mean(vals, weights) if key not in ("tau", "validation_mse") else float(np.mean(vals))
    return out


def stimulus_features(features: np.ndarray, origins: Sequence[str], ids: Sequence[str]) -> np.ndarray:
    """Mean feature vector of each stimulus, in the order of ``ids``."""
    origins = np.asarray(origins)
    return np.stack([features[origins == sid].mean(axis=0) for sid in ids])


class Experiment:
    """Runs one spec against a prepared corpus directory."""

    def __init__(self, spec: ExperimentSpec, data: ExperimentData, out_dir=None, workers: int = 1):
        spec.validate()
        self.spec, self.data, self.workers = spec, data, workers
        self.out = None if out_dir is None else Path(out_dir)
        self.hash = spec.spec_hash()
        scale = SCALES[spec.scale]
        self.cfg = network_config(spec.config, scale["architecture"])
        self.batch_size = scale["batch_size"]
        self.rows: List[Dict] = []
        self.details: List[Dict] = []
        self.silhouettes: List[Dict] = []
        self.ok = True

    def _base(self, **kw) -> Dict:
        return dict(configuration=self.spec.config, spec_hash=self.hash, status="ok", **kw)

    def _train(self, weights: TaskWeights, map_dim: int, coords_dim: int) -> List[RotationRun]:
        spec = self.spec
        return run_cross_validation(
            self.cfg, list(spec.tasks), weights, self.data.instances, self.data.records,
            n_classes=self.data.n_classes, map_dim=map_dim, coords=self.data.coords(coords_dim),
            plan=batch_plan(spec.tasks, self.batch_size), epochs=spec.effective_epochs, seed=spec.seed,
            learning_rate=spec.learning_rate, workers=self.workers)

    def _record_runs(self, runs: List[RotationRun], tag: str, beta_lambda, dim) -> List[np.ndarray]:
        """Checkpoints, curves, per-rotation details and psych features."""
        feats = []
        psych = None
        for k, run in enumerate(runs):
            net = run.result.network
            if self.out is not None:
                (self.out / "checkpoints").mkdir(parents=True, exist_ok=True)
                (self.out / "logs").mkdir(parents=True, exist_ok=True)
                net.save(self.out / "checkpoints" / f"{self.hash}_{tag}_r{k}.ssck")
                write_curve(self.out / "logs" / f"{self.hash}_{tag}_r{k}.csv", run.result.curve)
            detail = self._base(task=self._task_name(), beta_lambda=beta_lambda, dim=dim, fold=k,
                                best_epoch=run.result.best_epoch)
            detail.pop("status")
            for source, key in ((TUBERLIN, "tuberlin_accuracy"), (SKETCHY, "sketchy_accuracy")):
                if "classify" in self.spec.tasks and source in run.test:
                    logits = predict(net, run.test[source].images)["logits"]
                    detail[key] = float(np.mean(np.argmax(logits, axis=1) == run.test[source].labels))
            if "reconstruct" in self.spec.tasks:
                images = np.concatenate([d.images for d in run.test.values()])
                detail["reconstruction_error"] = reconstruction_error(net, images)
            self.details.append(detail)
            psych = self._psych()
            feats.append(predict(net, psych.images)["code"])
        return feats

    def _psych(self):
        if not hasattr(self, "_psych_data"):
            corpus = build_corpus([i for i in self.data.instances if i.source == PSYCH], self.data.records,
                                  self.data.coords(self.spec.dims[0]))
            self._psych_data = corpus[PSYCH]
        return self._psych_data

    def _task_name(self) -> str:
        return "multitask" if self.spec.multitask else "transfer"

    def _tau(self, feats: List[np.ndarray]) -> float:
        psych = self._psych()
        taus = [feature_space_tau(stimulus_features(f, psych.origin_ids, self.data.psych_ids),
                                  self.data.dissimilarities, self.spec.distance) for f in feats]
        return float(np.mean(taus))

    def _silhouette(self, runs: List[RotationRun], beta_lambda) -> None:
        psych = self._psych()
        for level in SILHOUETTE_NOISE:
            rng = np.random.default_rng([self.spec.seed, 101, int(round(level * 1000))])
            images = salt_pepper(psych.images, rng, level) if level > 0 else psych.images
            scores = [silhouette_cosine(predict(run.result.network, images)["code"], psych.origin_ids)
                      for run in runs]
            self.silhouettes.append(dict(configuration=self.spec.config, task=self._task_name(),
                                         beta_lambda=beta_lambda, noise_level=level,
                                         silhouette=float(np.mean(scores)), spec_hash=self.hash))

    def _zero_rows(self, dim: int) -> None:
        psych = self._psych()
        coords = self.data.coords(dim)
        truth = np.array([coords[o] for o in psych.origin_ids])
        rows, sizes = [], []
        for k, rot in enumerate(FoldSchedule.standard(5).rotations):
            mask = psych.folds == rot.test
            row = self._base(task="-", regressor="zero", dim=dim, fold=k, selected=1)
            row.update(_mapping_row(np.zeros_like(truth[mask]), truth[mask], np.asarray(psych.origin_ids)[mask]))
            rows.append(row)
            sizes.append(int(mask.sum()))
        self.rows.extend(rows)
        self.rows.append(_mean_rows(rows, sizes, rows[0]))

    def _failed(self, regressor, beta_lambda, dim, exc: Exception) -> None:
        self.ok = False
        logger.error("%s %s %s failed: %s", regressor, beta_lambda, dim, exc)
        self.rows.append(self._base(task=self._task_name(), regressor=regressor, beta_lambda=beta_lambda, dim=dim,
                                    fold="mean", selected=0, status=f"failed: {type(exc).__name__}"))

    # -- transfer --------------------------------------------------------

    def _run_transfer(self) -> None:
        weights = TaskWeights(lambda_map=0.0, secondary=self.spec.secondary)
        try:
            runs = self._train(weights, 0, self.spec.dims[0])
        except (DivergenceError, EvaluationError) as exc:
            for dim in self.spec.dims:
                self._failed("pretraining", None, dim, exc)
            return
        feats = self._record_runs(runs, "pretrain", None, None)
        tau = self._tau(feats)
        self._silhouette(runs, None)
        psych = self._psych()
        for dim in self.spec.dims:
            coords = self.data.coords(dim)
            Y = np.array([coords[o] for o in psych.origin_ids])
            problems = [RegressionProblem(f, Y, psych.folds, psych.ids) for f in feats]
            self._transfer_linear(problems, runs, dim, tau)
            self._transfer_lasso(problems, runs, dim, tau)

    def _test_rows(self, problems, runs, models, template):
        rows, sizes = [], []
        origins = np.asarray(self._psych().origin_ids)
        for k, (prob, run, model) in enumerate(zip(problems, runs, models)):
            mask = prob.folds == run.rotation.test
            pred = model.predict(prob.X[mask])
            row = dict(template, fold=k)
            row.update(_mapping_row(pred, prob.Y[mask], origins[mask]))
            rows.append(row)
            sizes.append(int(mask.sum()))
        return rows, sizes

    def _transfer_linear(self, problems, runs, dim, tau) -> None:
        models = [fit_linear(p.rows(r.rotation.train)) for p, r in zip(problems, runs)]
        template = self._base(task="transfer", regressor="linear", dim=dim, tau=tau, selected=1)
        rows, sizes = self._test_rows(problems, runs, models, template)
        self.rows.extend(rows)
        self.rows.append(_mean_rows(rows, sizes, template))

    def _transfer_lasso(self, problems, runs, dim, tau) -> None:
        schedule = FoldSchedule(tuple(r.rotation for r in runs))
        sel = select_beta(problems, self.spec.effective_grid, schedule)
        template = self._base(task="transfer", regressor="lasso", dim=dim, tau=tau, selected=1,
                              beta_lambda=sel.best_beta, validation_mse=sel.validation_mse[sel.best_beta])
        rows, sizes = self._test_rows(problems, runs, sel.models, template)
        self.rows.extend(rows)
        mean = _mean_rows(rows, sizes, template)
        mean["validation_mse"] = sel.validation_mse[sel.best_beta]
        self.rows.append(mean)

    # -- multi-task ------------------------------------------------------

    def _run_multitask(self) -> None:
        for dim in self.spec.dims:
            candidates = []
            for lam in self.spec.effective_grid:
                try:
                    runs = self._train(TaskWeights(lambda_map=lam, secondary=self.spec.secondary), dim, dim)
                except (DivergenceError, EvaluationError) as exc:
                    self._failed("network", lam, dim, exc)
                    continue
                feats = self._record_runs(runs, f"lambda{lam:g}_dim{dim}", lam, dim)
                tau = self._tau(feats)
                if dim == self.spec.dims[0]:
                    self._silhouette(runs, lam)
                psych = self._psych()
                origins = np.asarray(psych.origin_ids)
                coords = self.data.coords(dim)
                truth = np.array([coords[o] for o in psych.origin_ids])
                template = self._base(task="multitask", regressor="network", beta_lambda=lam, dim=dim, tau=tau)
                rows, sizes = [], []
                for k, (run, f) in enumerate(zip(runs, feats)):
                    mask = psych.folds == run.rotation.test
                    row = dict(template, fold=k, validation_mse=min(c["validation"] for c in run.result.curve))
                    row.update(_mapping_row(f[mask, :dim], truth[mask], origins[mask]))
                    rows.append(row)
                    sizes.append(int(mask.sum()))
                mean = _mean_rows(rows, sizes, template)
                candidates.append((mean["validation_mse"], lam, rows, mean))
            if not candidates:
                continue
            best = min(candidates, key=lambda c: (c[0], c[1]))[1]
            for _, lam, rows, mean in candidates:
                flag = int(lam == best)
                self.rows.extend(dict(r, selected=flag) for r in rows)
                self.rows.append(dict(mean, selected=flag))

    def run(self) -> bool:
        for dim in self.spec.dims:
            self._zero_rows(dim)
        if self.spec.multitask:
            self._run_multitask()
        else:
            self._run_transfer()
        return self.ok


def selected_value(rows: Sequence[Dict], regressor: str, dim: int = REFERENCE_DIM) -> Optional[float]:
    """The beta or lambda chosen for ``regressor`` on dimension ``dim``."""
    for row in rows:
        if (row.get("regressor") == regressor and str(row.get("fold")) == "mean"
                and str(row.get("selected")) == "1" and int(row.get("dim") or -1) == dim
                and row.get("beta_lambda") not in (None, "")):
            return float(row["beta_lambda"])
    return None


def sweep_specs(base: ExperimentSpec, selected: float, dims: Sequence[int]) -> ExperimentSpec:
    """Same configuration retrained on other dimensions with a fixed beta/lambda."""
    return replace(base, grid=(float(selected),), dims=tuple(dims))
