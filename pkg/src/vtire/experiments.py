"""Modality-ablation experiments shared by the CLI and the acceptance suite."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datasets import (DEFAULT_COUNTS, DatasetConfig, DatasetManifest, generate_sample, labels_of,
                       load_samples, split, task_classes)
from .mmvtt import FusionConfig, TrainResult, train, with_overrides
from .modality import modalities_for, stack_fragments
from .synth import FrameGeometry, derive_seed

log = logging.getLogger(__name__)


@dataclass
class SampleSet:
    """Samples held in memory together with a manifest describing them."""

    manifest: DatasetManifest
    samples: list
    fragments: dict = field(default_factory=dict)  # mode -> {modality: array}

    def index(self, ids):
        pos = {sid: k for k, sid in enumerate(self.manifest.ids)}
        return np.array([pos[i] for i in ids], dtype=np.int64)

    def inputs(self, mode, dtype=np.float32):
        mods = modalities_for(mode)
        have = {}
        for cached in self.fragments.values():
            have.update(cached)
        if not all(m in have for m in mods):
            fr = stack_fragments(self.samples, mode, FrameGeometry(**self.manifest.geometry), dtype)
            self.fragments[mode] = fr
            have.update(fr)
        return {m: have[m].astype(dtype, copy=False) for m in mods}


def _gen(args):
    task, name, seed, config = args
    return generate_sample(task, name, seed, config)


def generate_in_memory(task, config: DatasetConfig = DatasetConfig(), seed=0, workers=1) -> SampleSet:
    """Same samples (same seeds) as ``build_dataset`` would write, kept in memory."""
    classes = task_classes(task)
    count = config.count_per_class or DEFAULT_COUNTS[task]
    jobs = [(task, n, derive_seed(seed, "dataset", task, n, i), config)
            for n in classes for i in range(count)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            samples = list(ex.map(_gen, jobs, chunksize=16))
    else:
        samples = [_gen(j) for j in jobs]
    manifest = DatasetManifest(task, classes, {n: count for n in classes}, config.split_ratio, int(seed),
                               FrameGeometry().to_dict(), {},
                               samples=[{"id": f"{n}/{s}", "class": n, "label": classes.index(n),
                                         "seed": int(s)} for _, n, s, _ in jobs])
    return SampleSet(manifest, samples)


def from_disk(root) -> SampleSet:
    manifest = DatasetManifest.load(root)
    return SampleSet(manifest, list(load_samples(manifest.ids, manifest, root)))


@dataclass
class RunRecord:
    mode: str
    seed: int
    result: TrainResult
    seconds: float

    def summary(self):
        return {**self.result.summary(), "seconds": round(self.seconds, 3)}


def run_mode(data: SampleSet, mode, fusion: FusionConfig, seed, split_ratio=0.7,
             progress=None) -> RunRecord:
    """Train and evaluate one mode on the ``seed``-th stratified split with ``seed`` init."""
    parts = split(data.manifest, split_ratio, seed)
    tr, ev = data.index(parts["train"]), data.index(parts["eval"])
    X = data.inputs(mode, fusion.dtype)
    y = labels_of(data.manifest.ids, data.manifest)
    cfg = with_overrides(fusion, seed=seed, classes=len(data.manifest.classes))
    t0 = time.perf_counter()
    res = train({m: v[tr] for m, v in X.items()}, y[tr], {m: v[ev] for m, v in X.items()}, y[ev],
                mode, cfg, progress=progress)
    rec = RunRecord(mode, seed, res, time.perf_counter() - t0)
    log.info("%s seed %d: %s", mode, seed, rec.summary())
    return rec


def run_ablation(data: SampleSet, modes, seeds, fusion: FusionConfig = FusionConfig(),
                 split_ratio=0.7, progress=None):
    """``{mode: [RunRecord per seed]}``."""
    out = {}
    for mode in modes:
        out[mode] = []
        for seed in seeds:
            cb = (lambda h, m=mode, s=seed: progress(m, s, h)) if progress else None
            out[mode].append(run_mode(data, mode, fusion, seed, split_ratio, cb))
    return out


def aggregate(records):
    """Mean and spread of the per-seed summaries of one mode."""
    accs = np.array([r.result.acc_last10_mean for r in records])
    maxs = np.array([r.result.acc_max for r in records])
    return {"acc_last10_mean": float(accs.mean()), "acc_last10_std": float(accs.std()),
            "acc_max_mean": float(maxs.mean()), "seeds": [r.seed for r in records],
            "per_seed": [r.summary() for r in records]}
