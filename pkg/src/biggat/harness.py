"""Leave-one-event-out evaluation and the overlap / disjoint test split.

Everything fitted for a fold (feature scaler, cluster centroids, neighborhood
orders) comes from the training events only. The held-out event gets its
cluster labels from wind features alone and its neighborhood order as the
lower median of the training events' selected orders.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from biggat.clustering import ClusterModel, assign_clusters, fit_bimodal
from biggat.data import EventDataset, FeatureScaler
from biggat.graph import UNREACHABLE, Graph
from biggat.metrics import MetricsReport, average_report, predict_classes
from biggat.model import ModelConfig, ModelParams, Neighborhoods, forward
from biggat.spatial import DEFAULT_ALPHA, DEFAULT_N_MAX, DEFAULT_N_PERM, select_neighborhood_order
from biggat.training import TrainConfig, TrainingBatch, TrainResult, train

DISJOINT_RULE = ("absolute-disjoint = test county absent from every training event and "
                 "not adjacent (order 1) to any training county")


def derive_seed(seed: int, *keys: str) -> int:
    """Stable child seed from a root seed and string keys (independent of list order)."""
    ss = np.random.SeedSequence([int(seed)] + [zlib.crc32(k.encode()) for k in keys])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class OrderSelection:
    n_max: int = DEFAULT_N_MAX
    alpha: float = DEFAULT_ALPHA
    n_perm: int = DEFAULT_N_PERM
    rule: str = "contiguous"


def event_order(event: EventDataset, seed: int, sel: OrderSelection) -> int:
    return select_neighborhood_order(event.peak_outages, event.graph, sel.n_max, sel.alpha,
                                     sel.n_perm, derive_seed(seed, "moran", event.event_id), sel.rule)


def held_out_order(train_orders: list[int]) -> int:
    return int(sorted(train_orders)[(len(train_orders) - 1) // 2])


@dataclass
class FoldArtifacts:
    """Preprocessing fitted on the training events of one fold."""

    train_ids: tuple[str, ...]
    scaler: FeatureScaler
    clusters: ClusterModel
    train_orders: dict[str, int]
    test_order: int

    def to_dict(self) -> dict:
        return {
            "train_events": list(self.train_ids),
            "scaler": self.scaler.to_dict(),
            "cluster_centroids": self.clusters.centroids.tolist(),
            "cluster_seed": self.clusters.seed,
            "train_orders": dict(self.train_orders),
            "test_order": self.test_order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldArtifacts":
        centroids = np.asarray(d["cluster_centroids"], float)
        cm = ClusterModel(len(centroids), centroids, np.zeros(0, int), d["cluster_seed"])
        return cls(tuple(d["train_events"]), FeatureScaler.from_dict(d["scaler"]), cm,
                   dict(d["train_orders"]), int(d["test_order"]))


def fit_fold(train_events: list[EventDataset], model_config: ModelConfig, seed: int,
             sel: OrderSelection | None = None, order_cache: dict | None = None) -> FoldArtifacts:
    sel = sel or OrderSelection()
    train_events = sorted(train_events, key=lambda e: e.event_id)
    scaler = FeatureScaler.fit([e.features for e in train_events])
    clusters = fit_bimodal(np.vstack([e.features for e in train_events]),
                           np.concatenate([e.labels for e in train_events]),
                           seed=derive_seed(seed, "kmeans", *[e.event_id for e in train_events]))
    orders = {}
    for e in train_events:
        if not model_config.uses_data_order:
            orders[e.event_id] = model_config.neighborhood_order
            continue
        key = (e.event_id, seed, sel)
        if order_cache is not None and key in order_cache:
            orders[e.event_id] = order_cache[key]
        else:
            orders[e.event_id] = event_order(e, seed, sel)
            if order_cache is not None:
                order_cache[key] = orders[e.event_id]
    test_order = (held_out_order(list(orders.values())) if model_config.uses_data_order
                  else model_config.neighborhood_order)
    return FoldArtifacts(tuple(e.event_id for e in train_events), scaler, clusters, orders, test_order)


def training_batches(train_events: list[EventDataset], art: FoldArtifacts,
                     source: str = "kmeans") -> list[TrainingBatch]:
    """Per-event batches; ``source`` picks k-means labels or the wind-only test-time rule."""
    train_events = sorted(train_events, key=lambda e: e.event_id)
    batches, start = [], 0
    for e in train_events:
        if source == "kmeans":
            lab = art.clusters.train_assignments[start:start + e.N]
        elif source == "inferred":
            lab = assign_clusters(art.clusters, e.features)
        else:
            raise ValueError(f"unknown cluster source {source!r}")
        start += e.N
        batches.append(TrainingBatch(e.event_id, art.scaler.transform(e.features), lab, e.labels,
                                     Neighborhoods.from_graph(e.graph, art.train_orders[e.event_id])))
    return batches


def test_batch(event: EventDataset, art: FoldArtifacts) -> TrainingBatch:
    return TrainingBatch(event.event_id, art.scaler.transform(event.features),
                         assign_clusters(art.clusters, event.features), event.labels,
                         Neighborhoods.from_graph(event.graph, art.test_order))


def predict(params: ModelParams, model_config: ModelConfig, batch: TrainingBatch) -> np.ndarray:
    return forward(params, model_config, batch.X, batch.clusters, batch.nbhd)


def evaluate_batch(params, model_config, batch: TrainingBatch) -> tuple[MetricsReport, np.ndarray]:
    logits = predict(params, model_config, batch)
    return MetricsReport.from_predictions(batch.targets, predict_classes(logits), batch.event_id), logits


def evaluate(params: ModelParams, model_config: ModelConfig, event: EventDataset,
             art: FoldArtifacts) -> MetricsReport:
    return evaluate_batch(params, model_config, test_batch(event, art))[0]


@dataclass
class FoldResult:
    event_id: str
    test: MetricsReport
    train: MetricsReport
    artifacts: FoldArtifacts
    fit: TrainResult
    logits: np.ndarray
    split: "SplitReport | None" = None


def run_fold(held_out: EventDataset, train_events: list[EventDataset], model_config: ModelConfig,
             train_config: TrainConfig, sel: OrderSelection | None = None,
             national: Graph | None = None, order_cache: dict | None = None) -> FoldResult:
    art = fit_fold(train_events, model_config, train_config.seed, sel, order_cache)
    batches = training_batches(train_events, art, train_config.train_clusters)
    tc = replace(train_config, seed=derive_seed(train_config.seed, "init", held_out.event_id))
    fit = train(batches, model_config, tc)
    preds, truth = [], []
    for b in batches:
        preds.append(predict_classes(predict(fit.params, model_config, b)))
        truth.append(b.targets)
    train_report = MetricsReport.from_predictions(np.concatenate(truth), np.concatenate(preds), "train")
    test_report, logits = evaluate_batch(fit.params, model_config, test_batch(held_out, art))
    split = disjoint_split_eval(train_events, held_out, fit.params, model_config, art, national)
    return FoldResult(held_out.event_id, test_report, train_report, art, fit, logits, split)


def _fold_task(args):
    return run_fold(*args)


@dataclass
class LoeoReport:
    folds: list[FoldResult]
    average: MetricsReport
    model_config: ModelConfig
    train_config: TrainConfig

    @property
    def rows(self) -> list[MetricsReport]:
        return [f.test for f in self.folds]

    @property
    def mean_train_accuracy(self) -> float:
        return float(np.mean([f.train.accuracy for f in self.folds]))

    def to_dict(self) -> dict:
        return {
            "variant": self.model_config.variant_name,
            "events": [dict(f.test.to_dict(), neighborhood_order=f.artifacts.test_order,
                            train_accuracy=f.train.accuracy,
                            final_loss=f.fit.loss_history[-1]) for f in self.folds],
            "average": self.average.to_dict(),
            "mean_train_accuracy": self.mean_train_accuracy,
        }


def loeo_run(all_events: list[EventDataset], model_config: ModelConfig, train_config: TrainConfig,
             sel: OrderSelection | None = None, national: Graph | None = None,
             n_jobs: int = 1) -> LoeoReport:
    """Hold each event out once; rows follow event-id order, average is unweighted."""
    if len(all_events) < 2:
        raise ValueError("leave-one-event-out needs at least 2 events")
    events = sorted(all_events, key=lambda e: e.event_id)
    tasks = [(e, [o for o in events if o.event_id != e.event_id], model_config, train_config, sel, national)
             for e in events]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            folds = list(pool.map(_fold_task, tasks))
    else:
        cache: dict = {}
        folds = [run_fold(*t, order_cache=cache) for t in tasks]
    return LoeoReport(folds, average_report([f.test for f in folds]), model_config, train_config)


# ---------------------------------------------------------------- overlap / disjoint

@dataclass
class SplitReport:
    overlap: MetricsReport | None
    disjoint: MetricsReport | None
    overlap_size: int
    disjoint_size: int
    disjoint_error_share: float
    disjoint_fips: tuple[str, ...] = field(default=())
    rule: str = DISJOINT_RULE

    def to_dict(self) -> dict:
        return {
            "overlap": None if self.overlap is None else self.overlap.to_dict(),
            "disjoint": None if self.disjoint is None else self.disjoint.to_dict(),
            "overlap_size": self.overlap_size,
            "disjoint_size": self.disjoint_size,
            "disjoint_error_share": self.disjoint_error_share,
            "rule": self.rule,
        }


def overlap_mask(train_events: list[EventDataset], test_event: EventDataset,
                 national: Graph | None = None) -> np.ndarray:
    """True for test counties in, or order-1 adjacent to, any training-event county."""
    train_ids = set().union(*(e.fips for e in train_events)) if train_events else set()
    if national is None:
        graphs = [test_event.graph] + [e.graph for e in train_events]
        edges = {pair for g in graphs for pair in g.edges()}
        nbrs: dict[str, set] = {}
        for a, b in edges:
            nbrs.setdefault(a, set()).add(b)
            nbrs.setdefault(b, set()).add(a)
    else:
        nbrs = None
    mask = np.zeros(test_event.N, dtype=bool)
    for i, f in enumerate(test_event.fips):
        if f in train_ids:
            mask[i] = True
            continue
        if nbrs is not None:
            adj = nbrs.get(f, set())
        else:
            try:
                j = national.index(f)
            except ValueError:
                adj = set()
            else:
                adj = {national.node_ids[k] for k in national.neighbors(j)}
        mask[i] = bool(adj & train_ids)
    return mask


def disjoint_split_eval(train_events: list[EventDataset], test_event: EventDataset,
                        params: ModelParams, model_config: ModelConfig, art: FoldArtifacts,
                        national: Graph | None = None) -> SplitReport:
    batch = test_batch(test_event, art)
    pred = predict_classes(predict(params, model_config, batch))
    mask = overlap_mask(train_events, test_event, national)
    truth = test_event.labels
    wrong = pred != truth
    reports = {}
    for name, sel in (("overlap", mask), ("disjoint", ~mask)):
        reports[name] = (MetricsReport.from_predictions(truth[sel], pred[sel], f"{test_event.event_id}:{name}")
                         if sel.any() else None)
    share = float(wrong[~mask].sum() / wrong.sum()) if wrong.any() else 0.0
    return SplitReport(reports["overlap"], reports["disjoint"], int(mask.sum()), int((~mask).sum()),
                       share, tuple(f for f, m in zip(test_event.fips, mask) if not m))


def component_has_training_county(graph: Graph, fips: str, train_ids: set) -> bool:
    """Whether the connected component of ``fips`` in ``graph`` holds a training county."""
    d = graph.distance_matrix()[graph.index(fips)]
    return any(graph.node_ids[j] in train_ids for j in np.flatnonzero(d != UNREACHABLE))
