"""Loss composition, source-proportional batches, early stopping and the
five-fold cross-validation harness."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .augment import AugmentedInstance, fold_violations, salt_pepper
from .datasets import EXTRA, PSYCH, SKETCHY, SOURCES, TUBERLIN, FoldSchedule, Rotation, StimulusRecord
from .errors import ConfigError, DataError, DivergenceError, FoldLeakageError
from .layers import mse_loss, sigmoid_cross_entropy, softmax_cross_entropy
from .model import Network, NetworkConfig, build_network
from .optim import AdamState, adam_step
from .tensor import Tensor

logger = logging.getLogger(__name__)

LAMBDA_GRID = (0.0625, 0.125, 0.25, 0.5, 1.0, 2.0)
CLASSIFIED_SOURCES = (TUBERLIN, SKETCHY)

PAPER_PLANS = {
    "classify": {TUBERLIN: 63, SKETCHY: 65},
    "classify+map": {PSYCH: 25, TUBERLIN: 51, SKETCHY: 52},
    "reconstruct": {PSYCH: 21, EXTRA: 24, TUBERLIN: 41, SKETCHY: 42},
}


# -- corpora -------------------------------------------------------------

@dataclass
class SourceData:
    """All augmented instances of one source, stacked."""

    images: np.ndarray
    labels: np.ndarray
    origin_ids: List[str]
    folds: np.ndarray
    ids: List[str]
    coords: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.ids)

    def subset(self, mask: np.ndarray) -> "SourceData":
        idx = np.flatnonzero(mask)
        return SourceData(
            images=self.images[idx], labels=self.labels[idx],
            origin_ids=[self.origin_ids[i] for i in idx], folds=self.folds[idx],
            ids=[self.ids[i] for i in idx],
            coords=None if self.coords is None else self.coords[idx],
        )


Corpus = Dict[str, SourceData]


def build_corpus(instances: Sequence[AugmentedInstance], records: Sequence[StimulusRecord],
                 coords: Optional[Mapping[str, Sequence[float]]] = None) -> Corpus:
    """Group instances by source; psychological instances get their origin's coordinates.

    ``coords`` maps stimulus ids to target coordinates and overrides the
    coordinates stored on the records.
    """
    by_id = {r.id: r for r in records}
    corpus = {}
    for source in SOURCES:
        insts = [i for i in instances if i.source == source]
        if not insts:
            continue
        missing = [i.id for i in insts if i.origin_id not in by_id]
        if missing:
            raise DataError(f"instances without a known origin: {missing[:3]}")
        data = SourceData(
            images=np.stack([i.image for i in insts]),
            labels=np.array([by_id[i.origin_id].class_label for i in insts], dtype=np.int64),
            origin_ids=[i.origin_id for i in insts],
            folds=np.array([-1 if i.fold_id is None else i.fold_id for i in insts], dtype=np.int64),
            ids=[i.id for i in insts],
        )
        if source == PSYCH:
            lookup = coords if coords is not None else {r.id: r.coords for r in records if r.coords is not None}
            data.coords = np.array([lookup[o] for o in data.origin_ids], dtype=np.float64)
        corpus[source] = data
    return corpus


def audit_folds(instances: Iterable[AugmentedInstance], records: Iterable[StimulusRecord]) -> None:
    """Raise :class:`FoldLeakageError` for the first instance outside its origin's fold."""
    bad = fold_violations(instances, records)
    if bad:
        raise FoldLeakageError(bad[0])


def select_folds(corpus: Corpus, folds: Sequence[int]) -> Corpus:
    out = {}
    for source, data in corpus.items():
        sub = data.subset(np.isin(data.folds, list(folds)))
        if len(sub):
            out[source] = sub
    return out


# -- batches -------------------------------------------------------------

@dataclass(frozen=True)
class TaskWeights:
    lambda_map: float = 1.0
    secondary: Optional[str] = "classify"

    def __post_init__(self):
        if self.secondary not in (None, "classify", "reconstruct"):
            raise ConfigError(f"unknown secondary task {self.secondary!r}")
        if self.lambda_map < 0:
            raise ConfigError("lambda_map must be non-negative")


@dataclass(frozen=True)
class BatchPlan:
    """Examples per source in every minibatch."""

    counts: Tuple[Tuple[str, int], ...]
    batch_size: int

    def __post_init__(self):
        total = sum(c for _, c in self.counts)
        if total != self.batch_size:
            raise ConfigError(f"batch plan counts sum to {total}, expected {self.batch_size}")
        for source, count in self.counts:
            if source not in SOURCES or count < 1:
                raise ConfigError(f"invalid plan entry {source}: {count}")

    @classmethod
    def from_counts(cls, counts: Mapping[str, int], batch_size: Optional[int] = None) -> "BatchPlan":
        ordered = tuple((s, int(counts[s])) for s in SOURCES if s in counts)
        return cls(ordered, sum(counts.values()) if batch_size is None else batch_size)

    def as_dict(self) -> Dict[str, int]:
        return dict(self.counts)


def _plan_key(tasks: Iterable[str]) -> str:
    tasks = set(tasks)
    if "reconstruct" in tasks:
        return "reconstruct"
    if "classify" in tasks:
        return "classify+map" if "map" in tasks else "classify"
    if tasks == {"map"}:
        return "map"
    raise ConfigError(f"no batch plan for tasks {sorted(tasks)}")


def rescale_counts(counts: Mapping[str, int], batch_size: int) -> Dict[str, int]:
    """Proportional rescaling with largest-remainder rounding (ties to the later source)."""
    total = sum(counts.values())
    exact = {s: c * batch_size / total for s, c in counts.items()}
    out = {s: max(1, int(math.floor(v))) for s, v in exact.items()}
    order = sorted(counts, key=lambda s: (exact[s] - math.floor(exact[s]), SOURCES.index(s)), reverse=True)
    i = 0
    while sum(out.values()) < batch_size:
        out[order[i % len(order)]] += 1
        i += 1
    return out


def batch_plan(tasks: Iterable[str], batch_size: int = 128) -> BatchPlan:
    """Per-source counts for a task set; sizes other than 128 rescale the reference plans."""
    key = _plan_key(tasks)
    if key == "map":
        return BatchPlan.from_counts({PSYCH: batch_size})
    counts = PAPER_PLANS[key]
    if batch_size != 128:
        counts = rescale_counts(counts, batch_size)
    return BatchPlan.from_counts(counts, batch_size)


class SourceStream:
    """Endless sequence of indices: shuffled passes over ``n`` items."""

    def __init__(self, n: int, rng: np.random.Generator):
        if n < 1:
            raise DataError("cannot sample from an empty source")
        self.n, self.rng = n, rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pos == self.n:
                self.order, self.pos = self.rng.permutation(self.n), 0
            chunk = self.order[self.pos:self.pos + k]
            out.append(chunk)
            self.pos += len(chunk)
            k -= len(chunk)
        return np.concatenate(out)


@dataclass
class Batch:
    inputs: np.ndarray
    clean: np.ndarray
    labels: np.ndarray
    class_mask: np.ndarray
    coords: Optional[np.ndarray]
    coord_mask: np.ndarray
    sources: List[str]


def compose_batch(corpus: Corpus, plan: BatchPlan, rng: np.random.Generator, noise_level: float = 0.0,
                  streams: Optional[Dict[str, SourceStream]] = None) -> Batch:
    """Draw exactly the planned number of examples from every source.

    Inputs receive salt-and-pepper noise; ``clean`` keeps the uncorrupted
    images as reconstruction targets.
    """
    parts = []
    for source, count in plan.counts:
        data = corpus.get(source)
        if data is None or len(data) == 0:
            raise DataError(f"source {source} is empty")
        if streams is not None:
            idx = streams[source].take(count)
        else:
            idx = rng.choice(len(data), size=count, replace=count > len(data))
        parts.append((source, data, idx))
    clean = np.concatenate([d.images[i] for _, d, i in parts])
    labels = np.concatenate([d.labels[i] for _, d, i in parts])
    sources = [s for s, _, i in parts for _ in range(len(i))]
    class_mask = np.array([s in CLASSIFIED_SOURCES for s in sources])
    coord_mask = np.array([s == PSYCH for s in sources])
    coords = None
    if coord_mask.any():
        dim = corpus[PSYCH].coords.shape[1]
        coords = np.full((len(sources), dim), np.nan)
        coords[coord_mask] = np.concatenate([d.coords[i] for s, d, i in parts if s == PSYCH])
    inputs = salt_pepper(clean, rng, noise_level) if noise_level > 0 else clean
    return Batch(inputs, clean, labels, class_mask, coords, coord_mask, sources)


# -- losses --------------------------------------------------------------

def total_loss(outputs: Mapping[str, Tensor], batch: Batch, weights: TaskWeights,
               tasks: Iterable[str]) -> Tuple[Tensor, Dict[str, float]]:
    """``secondary + lambda * mapping`` plus the individual components.

    Each component is a per-example mean over the rows it applies to:
    classification over sketch rows, mapping over rows with coordinates,
    reconstruction over all rows.
    """
    tasks = set(tasks)
    components: Dict[str, float] = {}
    total: Optional[Tensor] = None
    if "classify" in tasks and weights.secondary == "classify":
        rows = np.flatnonzero(batch.class_mask)
        if rows.size == 0:
            raise DataError("classification task active but batch has no labelled sketches")
        loss = softmax_cross_entropy(outputs["logits"][rows], batch.labels[rows])
        components["classify"] = loss.item()
        total = loss
    if "reconstruct" in tasks and weights.secondary == "reconstruct":
        loss = sigmoid_cross_entropy(outputs["reconstruction"], batch.clean)
        components["reconstruct"] = loss.item()
        total = loss if total is None else total + loss
    if "map" in tasks:
        rows = np.flatnonzero(batch.coord_mask)
        if rows.size == 0:
            raise DataError("mapping task active but batch has no coordinate-labelled examples")
        loss = mse_loss(outputs["mapping"][rows], batch.coords[rows])
        components["map"] = loss.item()
        if weights.lambda_map:
            weighted = loss * weights.lambda_map
            total = weighted if total is None else total + weighted
    if total is None:
        raise ConfigError(f"no active loss for tasks {sorted(tasks)} and weights {weights}")
    components["total"] = total.item()
    return total, components


# -- evaluation helpers --------------------------------------------------

def predict(net: Network, images: np.ndarray, batch_size: int = 64) -> Dict[str, np.ndarray]:
    """Evaluation-mode outputs (no dropout, no noise) in chunks."""
    chunks: Dict[str, List[np.ndarray]] = {}
    for start in range(0, len(images), batch_size):
        out = net.forward(images[start:start + batch_size], training=False)
        for key, value in out.items():
            chunks.setdefault(key, []).append(value.data)
    return {k: np.concatenate(v) for k, v in chunks.items()}


def validation_loss(net: Network, corpus: Corpus, tasks: Iterable[str], plan: BatchPlan) -> float:
    """Mapping MSE when mapping is trained, otherwise the secondary loss."""
    tasks = set(tasks)
    if "map" in tasks:
        data = corpus.get(PSYCH)
        if data is None:
            raise DataError("validation fold has no psychological instances")
        pred = predict(net, data.images)["mapping"]
        return float(np.mean((pred - data.coords) ** 2))
    if "classify" in tasks:
        losses, counts = [], []
        for source in CLASSIFIED_SOURCES:
            if source not in corpus:
                continue
            data = corpus[source]
            logits = predict(net, data.images)["logits"]
            losses.append(softmax_cross_entropy(logits, data.labels).item())
            counts.append(len(data))
        if not counts:
            raise DataError("validation fold has no sketches")
        return float(np.average(losses, weights=counts))
    losses, counts = [], []
    for source in plan.as_dict():
        if source not in corpus:
            continue
        data = corpus[source]
        recon = predict(net, data.images)["reconstruction"]
        losses.append(sigmoid_cross_entropy(recon, data.images).item())
        counts.append(len(data))
    return float(np.average(losses, weights=counts))


# -- training ------------------------------------------------------------

@dataclass
class TrainResult:
    network: Network
    best_epoch: int
    best_state: Dict[str, np.ndarray]
    curve: List[Dict[str, float]] = field(default_factory=list)


def steps_per_epoch(corpus: Corpus, plan: BatchPlan) -> int:
    """Batches needed to draw every instance of the largest source once.

    Smaller sources cycle through their instances more than once.
    """
    counts = plan.as_dict()
    largest = max(counts, key=lambda s: (len(corpus[s]), -SOURCES.index(s)))
    return math.ceil(len(corpus[largest]) / counts[largest])


def train_one_setting(network: Network, tasks: Sequence[str], weights: TaskWeights, train: Corpus,
                      validation: Corpus, plan: BatchPlan, epochs: int = 30, rng=None,
                      learning_rate: float = 1e-4, noise_level: Optional[float] = None,
                      stop_below: Optional[float] = None) -> TrainResult:
    """Train for ``epochs`` epochs and restore the epoch with the lowest validation loss.

    Ties go to the earliest epoch.  With ``stop_below`` set, training ends
    after the first epoch whose validation loss falls under it.  Returns the
    restored network with its per-epoch curve.
    """
    if epochs < 1:
        raise ConfigError("at least one epoch is required")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    noise = network.config.encoder.noise_level if noise_level is None else noise_level
    for source, _ in plan.counts:
        if source not in train:
            raise DataError(f"training folds contain no {source} instances")
    streams = {s: SourceStream(len(train[s]), rng) for s, _ in plan.counts}
    n_steps = steps_per_epoch(train, plan)
    state = AdamState(learning_rate=learning_rate)
    params = network.parameters()
    decays = network.weight_decays()
    best_loss, best_epoch, best_state = math.inf, -1, None
    curve = []
    for epoch in range(epochs):
        sums: Dict[str, float] = {}
        for _ in range(n_steps):
            batch = compose_batch(train, plan, rng, noise, streams)
            for p in params:
                p.grad = None
            outputs = network.forward(batch.inputs, training=True, rng=rng)
            loss, parts = total_loss(outputs, batch, weights, tasks)
            if not np.isfinite(parts["total"]):
                raise DivergenceError(epoch)
            loss.backward()
            adam_step(params, [p.grad for p in params], state, decays)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
        val = validation_loss(network, validation, tasks, plan)
        if not np.isfinite(val):
            raise DivergenceError(epoch, f"non-finite validation loss in epoch {epoch}")
        row = {"epoch": epoch, **{f"train_{k}": v / n_steps for k, v in sums.items()}, "validation": val}
        curve.append(row)
        logger.info("epoch %d: %s", epoch, row)
        if val < best_loss:
            best_loss, best_epoch, best_state = val, epoch, network.state_dict()
        if stop_below is not None and val < stop_below:
            break
    network.load_state_dict(best_state)
    return TrainResult(network=network, best_epoch=best_epoch, best_state=best_state, curve=curve)


def write_curve(path, curve: Sequence[Mapping[str, float]]) -> None:
    keys = sorted({k for row in curve for k in row}, key=lambda k: (k != "epoch", k == "validation", k))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in curve:
            w.writerow({k: (repr(float(v)) if k != "epoch" else int(v)) for k, v in row.items()})


# -- cross validation ----------------------------------------------------

@dataclass
class RotationRun:
    rotation: Rotation
    result: TrainResult
    train: Corpus
    validation: Corpus
    test: Corpus


def rotation_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 7919, int(index)])


def run_rotation(config: NetworkConfig, tasks: Sequence[str], weights: TaskWeights, corpus: Corpus,
                 rotation: Rotation, index: int, n_classes: int, map_dim: int, plan: BatchPlan,
                 epochs: int, seed: int, learning_rate: float) -> RotationRun:
    rng = rotation_seed(seed, index)
    net = build_network(config, tasks, n_classes=n_classes, map_dim=map_dim, rng=rng)
    train = select_folds(corpus, rotation.train)
    val = select_folds(corpus, [rotation.validation])
    test = select_folds(corpus, [rotation.test])
    result = train_one_setting(net, tasks, weights, train, val, plan, epochs=epochs, rng=rng,
                               learning_rate=learning_rate)
    return RotationRun(rotation, result, train, val, test)


def run_cross_validation(config: NetworkConfig, tasks: Sequence[str], weights: TaskWeights,
                         instances: Sequence[AugmentedInstance], records: Sequence[StimulusRecord],
                         n_classes: int, map_dim: int = 0, coords=None, plan: Optional[BatchPlan] = None,
                         epochs: int = 30, seed: int = 0, learning_rate: float = 1e-4,
                         schedule: Optional[FoldSchedule] = None, workers: int = 1) -> List[RotationRun]:
    """Train one network per rotation of the fold schedule.

    Aborts with :class:`FoldLeakageError` if any augmented instance lies in
    a different fold than its original.
    """
    schedule = schedule or FoldSchedule.standard(5)
    schedule.validate()
    audit_folds(instances, records)
    corpus = build_corpus(instances, records, coords)
    plan = plan or batch_plan(tasks, 32)
    args = [(config, tasks, weights, corpus, rot, i, n_classes, map_dim, plan, epochs, seed, learning_rate)
            for i, rot in enumerate(schedule.rotations)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_rotation_star, args))
    return [run_rotation(*a) for a in args]


def _run_rotation_star(args):
    return run_rotation(*args)
