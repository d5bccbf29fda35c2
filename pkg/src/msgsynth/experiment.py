"""The four-scenario Real/Synthetic classification matrix."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classifier import (
    MiniResNet,
    TransferConfig,
    apply_transfer,
    build_classifier,
    predict,
    train_classifier,
)
from .config import fingerprint
from .data import (
    PatchDataset,
    ingest_directory,
    load_images,
    read_split_manifest,
    restrict,
    train_test_split,
)
from .report import ConfusionMatrix, MetricsReport, ScenarioMetrics, compute_metrics

log = logging.getLogger(__name__)

SOURCES = ("real", "synthetic")


@dataclass(frozen=True)
class Scenario:
    train_source: str
    test_source: str

    def __post_init__(self):
        if self.train_source not in SOURCES or self.test_source not in SOURCES:
            raise ValueError(f"scenario sources must be among {SOURCES}")

    @property
    def name(self) -> str:
        return f"{self.train_source.capitalize()}/{self.test_source.capitalize()}"

    @property
    def slug(self) -> str:
        return f"{self.train_source}_{self.test_source}"

    @property
    def within_source(self) -> bool:
        return self.train_source == self.test_source


DEFAULT_SCENARIOS = (
    Scenario("real", "real"),
    Scenario("synthetic", "synthetic"),
    Scenario("real", "synthetic"),
    Scenario("synthetic", "real"),
)


@dataclass(frozen=True)
class ExperimentPlan:
    scenarios: tuple[Scenario, ...] = DEFAULT_SCENARIOS
    seeds: tuple[int, ...] = (0,)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    train_frac: float = 0.7

    def __post_init__(self):
        if not self.scenarios:
            raise ValueError("plan needs at least one scenario")
        if not self.seeds:
            raise ValueError("plan needs at least one seed")
        if not 0 < self.train_frac < 1:
            raise ValueError("train_frac must lie in (0, 1)")

    def fingerprint(self) -> str:
        return fingerprint(self)


@dataclass(frozen=True)
class ScenarioSizes:
    scenario: str
    train: int
    test: int


def plan_scenarios(plan: ExperimentPlan, real_size: int, synth_size: int) -> list[ScenarioSizes]:
    """Train/test sizes each scenario will use, without touching any data."""
    sizes = {"real": real_size, "synthetic": synth_size}
    frac = Fraction(repr(plan.train_frac))
    out = []
    for sc in plan.scenarios:
        if sc.within_source:
            n = sizes[sc.train_source]
            n_train = int(n * frac)
            out.append(ScenarioSizes(sc.name, n_train, n - n_train))
        else:
            out.append(ScenarioSizes(sc.name, sizes[sc.train_source], sizes[sc.test_source]))
    return out


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------
def _load_corpora(real_dir, synth_dir, split_manifest=None) -> tuple[dict[str, PatchDataset], Optional[PatchDataset]]:
    real = ingest_directory(real_dir)
    synth = ingest_directory(synth_dir)
    pretext = None
    if split_manifest is not None:
        subsets = read_split_manifest(split_manifest)
        if "cls_pool" not in subsets:
            raise ValueError(f"{split_manifest} has no cls_pool subset")
        if "gan_pool" in subsets:
            pretext = restrict(real, subsets["gan_pool"])
        real = restrict(real, subsets["cls_pool"])
    if len(real) != len(synth):
        log.warning("corpus sizes differ: %d real vs %d synthetic images", len(real), len(synth))
    return {"real": real, "synthetic": synth}, pretext


def prepare_backbone(plan: ExperimentPlan, seed: int, out_dir: Path,
                     pretext: Optional[PatchDataset] = None, backbone: Optional[str] = None) -> str:
    """Backbone checkpoint shared by every scenario of one seed.

    An explicit checkpoint wins; otherwise the network is pretrained on the
    pretext pool (the GAN pool of the real corpus, disjoint from every
    classification image); failing both it stays at its random initialization.
    """
    if backbone:
        return str(backbone)
    cfg = plan.transfer
    net = build_classifier(cfg.resnet_spec(), seed=seed)
    if pretext is not None and len(pretext) and cfg.pretrain_epochs > 0:
        images, labels = load_images(pretext, None, cfg.input_size)
        train_classifier(net, images, labels, replace(cfg, seed=seed), epochs=cfg.pretrain_epochs)
    else:
        log.warning("no backbone checkpoint or pretext pool; seed %d uses a randomly initialized backbone", seed)
    path = out_dir / "backbone" / f"seed_{seed}"
    net.save(path, {"seed": seed})
    return str(path)


class _ImageCache:
    def __init__(self, corpora: dict[str, PatchDataset], size: int):
        self.corpora, self.size = corpora, size
        self._store: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def get(self, source: str) -> tuple[np.ndarray, np.ndarray]:
        if source not in self._store:
            self._store[source] = load_images(self.corpora[source], None, self.size)
        return self._store[source]


def run_scenario(scenario: Scenario, seed: int, plan: ExperimentPlan, cache: _ImageCache,
                 backbone_path: str, out_dir: Path) -> ScenarioMetrics:
    cfg = replace(plan.transfer, seed=seed, backbone=backbone_path)
    train_x, train_y = cache.get(scenario.train_source)
    test_x, test_y = cache.get(scenario.test_source)
    if scenario.within_source:
        tr, te = train_test_split(np.arange(len(train_y)), train_y, plan.train_frac, seed)
        train_x, train_y, test_x, test_y = train_x[tr], train_y[tr], test_x[te], test_y[te]
    net = apply_transfer(build_classifier(cfg.resnet_spec(), seed=seed), cfg)
    net, curve = train_classifier(net, train_x, train_y, cfg)
    predicted, _ = predict(net, test_x, cfg.batch_size)
    cm = ConfusionMatrix.from_predictions(test_y, predicted)
    row = compute_metrics(cm, scenario.name, seed=seed, train_size=len(train_y), test_size=len(test_y))
    run_dir = out_dir / "scenarios" / scenario.slug
    net.save(run_dir / f"seed_{seed}", {"scenario": scenario.name, "seed": seed, "input_size": cfg.input_size})
    with (run_dir / f"seed_{seed}_loss.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        writer.writerows((i, repr(v)) for i, v in enumerate(curve))
    log.info("%s seed %d: acc %.4f", scenario.name, seed, row.accuracy)
    return row


def _scenario_worker(args) -> ScenarioMetrics:
    scenario, seed, plan, real_dir, synth_dir, split_manifest, backbone_path, out_dir = args
    corpora, _ = _load_corpora(real_dir, synth_dir, split_manifest)
    cache = _ImageCache(corpora, plan.transfer.input_size)
    return run_scenario(scenario, seed, plan, cache, backbone_path, Path(out_dir))


def run_experiment_matrix(plan: ExperimentPlan, real_dir, synth_dir, out_dir,
                          split_manifest=None, backbone: Optional[str] = None,
                          parallel: bool = False) -> MetricsReport:
    """Run every (seed, scenario) pair in plan order and collect the report.

    Within-source scenarios use a seeded stratified train/test split; cross
    scenarios train on one whole corpus and test on the other. All scenarios
    of one seed start from the same backbone checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpora, pretext = _load_corpora(real_dir, synth_dir, split_manifest)
    cache = _ImageCache(corpora, plan.transfer.input_size)
    rows: list[ScenarioMetrics] = []
    for seed in plan.seeds:
        backbone_path = prepare_backbone(plan, seed, out_dir, pretext, backbone)
        if parallel:
            tasks = [(sc, seed, plan, str(real_dir), str(synth_dir),
                      None if split_manifest is None else str(split_manifest), backbone_path, str(out_dir))
                     for sc in plan.scenarios]
            with ProcessPoolExecutor(max_workers=len(tasks)) as pool:
                rows.extend(pool.map(_scenario_worker, tasks))
        else:
            rows.extend(run_scenario(sc, seed, plan, cache, backbone_path, out_dir) for sc in plan.scenarios)
    return MetricsReport(rows=rows, fingerprint=plan.fingerprint(), seeds=list(plan.seeds))


def load_scenario_network(out_dir, scenario: Scenario, seed: int) -> MiniResNet:
    return MiniResNet.load(Path(out_dir) / "scenarios" / scenario.slug / f"seed_{seed}")


def recompute_report(report: MetricsReport) -> MetricsReport:
    """Rebuild every row from its persisted confusion matrix."""
    rows = [compute_metrics(r.confusion, r.scenario, seed=r.seed, train_size=r.train_size,
                            test_size=r.test_size) for r in report.rows]
    return MetricsReport(rows=rows, fingerprint=report.fingerprint, seeds=list(report.seeds))


def summarize_sizes(sizes: Sequence[ScenarioSizes]) -> str:
    return "\n".join(f"{s.scenario}: train {s.train}, test {s.test}" for s in sizes)
