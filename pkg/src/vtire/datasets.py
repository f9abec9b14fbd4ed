"""On-disk datasets: generation, manifest with content hashes, stratified
splits and validated lazy loading.

Layout under the dataset root::

    manifest.json
    <split>/<class_name>/<seed>.png            raw frame
    <split>/<class_name>/<seed>.external.png   external camera image (if any)
    <split>/<class_name>/<seed>.mask.png       ground-truth mask, 0/255 (if any)
    <split>/<class_name>/<seed>.json           labels and generation parameters

Every sample id is ``"<class_name>/<seed>"`` where ``seed`` is the 64-bit
generation seed of that sample, derived from the dataset seed.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, DatasetIOError
from .modality import segment_regions
from .synth import (DAMAGE_STATES, OBJECT_KINDS, CorruptionSpec, FrameGeometry, FrameSample,
                    class_names, crack_sample, damage_sample, derive_seed, object_sample,
                    stream, terrain_sample)

MANIFEST_VERSION = 1
TASKS = ("terrain", "damage", "object_seg", "crack_seg", "load")


@dataclass(frozen=True)
class DatasetConfig:
    """Generation settings. ``count_per_class=None`` picks the task default."""

    count_per_class: int | None = None
    split_ratio: float = 0.7
    visual_salt_pepper: float = 0.05  # terrain: mud on the in-tire camera wall
    damage_salt_pepper: float = 0.05
    crack_width_mm: tuple = (0.15, 0.8)
    external: bool = True

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if self.count_per_class is not None and self.count_per_class < 1:
            raise ConfigError("count_per_class must be positive")


DEFAULT_COUNTS = {"terrain": 150, "damage": 120, "object_seg": 30, "crack_seg": 120}


def task_classes(task):
    if task == "terrain":
        return tuple(class_names())
    if task == "damage":
        return DAMAGE_STATES
    if task == "object_seg":
        return OBJECT_KINDS
    if task == "crack_seg":
        return ("crack",)
    if task == "load":
        raise ConfigError("the load task has no frame dataset; its data is the FEM load curve "
                          "(see `vtire load calibrate`)")
    raise ConfigError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")


def generate_sample(task, class_name, sample_seed, config: DatasetConfig = DatasetConfig(),
                    geometry: FrameGeometry = FrameGeometry()) -> FrameSample:
    """Deterministic sample for ``(task, class, seed, config)``."""
    if task == "terrain":
        spec = (CorruptionSpec("salt_pepper", density=config.visual_salt_pepper)
                if config.visual_salt_pepper > 0 else None)
        return terrain_sample(class_names().index(class_name), sample_seed, geometry,
                              visual_corruption=spec, external=config.external)
    if task == "damage":
        return damage_sample(class_name, sample_seed, geometry, salt_pepper=config.damage_salt_pepper)
    if task == "object_seg":
        return object_sample(class_name, sample_seed, geometry)
    if task == "crack_seg":
        width = float(stream(sample_seed, "crack-width").uniform(*config.crack_width_mm))
        return crack_sample(width, sample_seed, geometry)
    task_classes(task)  # raises for load/unknown
    raise AssertionError("unreachable")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class DatasetManifest:
    task: str
    classes: tuple
    counts: dict
    split_ratio: float
    seed: int
    geometry: dict
    config: dict
    samples: list = field(default_factory=list)  # entries: id, class, label, seed, split, files, sha256
    splits: dict = field(default_factory=dict)  # "<ratio>:<seed>" -> {"train": ids, "eval": ids}
    source: str = "synthetic"
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise DataError("class names must be unique")
        if not 0 < self.split_ratio < 1:
            raise DataError("split ratio must lie in (0, 1)")

    @property
    def ids(self):
        return [s["id"] for s in self.samples]

    def entry(self, sample_id):
        for s in self.samples:
            if s["id"] == sample_id:
                return s
        raise DataError(f"unknown sample id {sample_id!r}")

    def to_dict(self):
        d = asdict(self)
        d["classes"] = list(self.classes)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("version") != MANIFEST_VERSION:
            raise DataError(f"unsupported manifest version {d.get('version')!r}")
        d["classes"] = tuple(d["classes"])
        return cls(**d)

    def content_hash(self):
        """SHA-256 over the canonical manifest JSON (which lists every file hash)."""
        return hashlib.sha256(_canonical(self.to_dict()).encode()).hexdigest()

    def save(self, root):
        path = Path(root) / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, root):
        path = Path(root) / "manifest.json"
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except FileNotFoundError:
            raise DatasetIOError(f"no manifest at {path}", path) from None
        except json.JSONDecodeError as exc:
            raise DatasetIOError(f"corrupt manifest {path}: {exc}", path) from None


def split(manifest: DatasetManifest, ratio=0.7, seed=0):
    """Stratified seeded split: per class ``floor(ratio * n)`` train ids, the rest eval.

    A pure function of the manifest's sample list, ``ratio`` and ``seed``;
    ids keep manifest order inside each part.
    """
    if not 0 < ratio < 1:
        raise DataError("ratio must lie in (0, 1)")
    train_ids, eval_ids = [], []
    by_class = {}
    for s in manifest.samples:
        by_class.setdefault(s["class"], []).append(s["id"])
    for name in manifest.classes:
        ids = by_class.get(name, [])
        if len(ids) < 2:
            raise DataError(f"class {name!r} needs at least 2 samples to split, has {len(ids)}")
        perm = stream(seed, "split", name, repr(float(ratio))).permutation(len(ids))
        n_train = int(np.floor(ratio * len(ids)))
        chosen = set(perm[:n_train].tolist())
        train_ids += [i for k, i in enumerate(ids) if k in chosen]
        eval_ids += [i for k, i in enumerate(ids) if k not in chosen]
    return {"train": train_ids, "eval": eval_ids}


def frozen_split(manifest: DatasetManifest, ratio=0.7, seed=0, root=None):
    """Split stored in the manifest after first use, so later runs see the same ids."""
    key = f"{float(ratio)!r}:{int(seed)}"
    if key not in manifest.splits:
        manifest.splits[key] = split(manifest, ratio, seed)
        if root is not None:
            manifest.save(root)
    return manifest.splits[key]


def _write_png(path, array):
    Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8), mode="L").save(path, optimize=False)


def _sample_payload(args):
    task, class_name, sample_seed, config, geometry = args
    s = generate_sample(task, class_name, sample_seed, config, geometry)
    return class_name, sample_seed, s


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def build_dataset(task, out_dir, config: DatasetConfig = DatasetConfig(), seed=0,
                  geometry: FrameGeometry = FrameGeometry(), force=False, workers=1):
    """Generate a dataset on disk and return its manifest.

    Generation is parallel over samples when ``workers > 1``; files are
    written by this process in manifest order, so the output does not depend
    on the worker count.
    """
    classes = task_classes(task)
    count = config.count_per_class or DEFAULT_COUNTS[task]
    root = Path(out_dir)
    if root.exists() and any(root.iterdir()):
        if not force:
            raise DatasetIOError(f"output directory {root} is not empty (use force to overwrite)", root)
        shutil.rmtree(root)
    root.mkdir(parents=True, exist_ok=True)

    jobs = [(task, name, derive_seed(seed, "dataset", task, name, i), config, geometry)
            for name in classes for i in range(count)]
    manifest = DatasetManifest(task, classes, {n: count for n in classes}, config.split_ratio,
                               int(seed), geometry.to_dict(), _jsonable(asdict(config)))
    stub = DatasetManifest(task, classes, manifest.counts, config.split_ratio, int(seed),
                           manifest.geometry, manifest.config,
                           samples=[{"id": f"{n}/{s}", "class": n} for _, n, s, _, _ in jobs])
    parts = split(stub, config.split_ratio, seed)
    split_of = {i: "train" for i in parts["train"]} | {i: "eval" for i in parts["eval"]}

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = ex.map(_sample_payload, jobs, chunksize=8)
            _write_all(root, manifest, classes, results, split_of)
    else:
        _write_all(root, manifest, classes, map(_sample_payload, jobs), split_of)
    manifest.splits[f"{float(config.split_ratio)!r}:{int(seed)}"] = parts
    manifest.save(root)
    return manifest


def _write_all(root, manifest, classes, results, split_of):
    for class_name, sample_seed, s in results:
        sid = f"{class_name}/{sample_seed}"
        part = split_of[sid]
        folder = root / part / class_name
        folder.mkdir(parents=True, exist_ok=True)
        files = {"raw": f"{part}/{class_name}/{sample_seed}.png",
                 "meta": f"{part}/{class_name}/{sample_seed}.json"}
        _write_png(root / files["raw"], s.raw_frame)
        if s.external_image is not None:
            files["external"] = f"{part}/{class_name}/{sample_seed}.external.png"
            _write_png(root / files["external"], s.external_image)
        if s.contact_mask is not None:
            files["mask"] = f"{part}/{class_name}/{sample_seed}.mask.png"
            _write_png(root / files["mask"], np.where(s.contact_mask, 255, 0))
        meta = {"id": sid, "class": class_name, "label": classes.index(class_name),
                "seed": int(sample_seed), "terrain_label": s.terrain_label,
                "damage_label": s.damage_label, "params": _jsonable(s.params)}
        (root / files["meta"]).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
        manifest.samples.append({"id": sid, "class": class_name, "label": classes.index(class_name),
                                 "seed": int(sample_seed), "split": part, "files": files,
                                 "sha256": {k: sha256_file(root / p) for k, p in files.items()}})


def _read_checked(root, rel, expected_hash, source):
    path = Path(root) / rel
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc.strerror or exc}", path) from None
    if source != "real" or expected_hash:
        if hashlib.sha256(data).hexdigest() != expected_hash:
            raise DatasetIOError(f"{path} does not match its manifest hash", path)
    return path


def _read_png(path, shape):
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DatasetIOError(f"{path}: expected 8-bit grayscale, got mode {im.mode}", path)
            arr = np.asarray(im, dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        if isinstance(exc, DatasetIOError):
            raise
        raise DatasetIOError(f"cannot decode {path}: {exc}", path) from None
    if shape is not None and arr.shape != tuple(shape):
        raise DatasetIOError(f"{path}: shape {arr.shape} != expected {tuple(shape)}", path)
    return arr


def load_samples(ids, manifest: DatasetManifest, root):
    """Lazily yield ``FrameSample`` objects in the order of ``ids``.

    Each file is checked against its manifest hash, bit depth and shape; any
    mismatch raises ``DatasetIOError`` naming the file.
    """
    geometry = FrameGeometry(**manifest.geometry)
    by_id = {s["id"]: s for s in manifest.samples}
    n = geometry.crop_size
    for sid in ids:
        if sid not in by_id:
            raise DataError(f"unknown sample id {sid!r}")
        e = by_id[sid]
        files, hashes = e["files"], e.get("sha256", {})
        raw = _read_png(_read_checked(root, files["raw"], hashes.get("raw"), manifest.source),
                        (geometry.frame_size, geometry.frame_size))
        meta_path = _read_checked(root, files["meta"], hashes.get("meta"), manifest.source)
        meta = json.loads(meta_path.read_text())
        ext = mask = None
        if "external" in files:
            ext = _read_png(_read_checked(root, files["external"], hashes.get("external"),
                                          manifest.source), None)
        if "mask" in files:
            mask = _read_png(_read_checked(root, files["mask"], hashes.get("mask"), manifest.source),
                             (n, n)) > 127
        tactile, visual = segment_regions(raw, geometry)
        yield FrameSample(raw, tactile, visual, ext, terrain_label=meta.get("terrain_label"),
                          damage_label=meta.get("damage_label"), contact_mask=mask,
                          seed=int(e["seed"]), params=meta.get("params", {}))


def labels_of(ids, manifest: DatasetManifest):
    by_id = {s["id"]: s["label"] for s in manifest.samples}
    return np.array([by_id[i] for i in ids], dtype=np.int64)


def verify_regeneration(manifest: DatasetManifest, root, limit=None):
    """Regenerate samples from their seeds and compare with the stored raw frames.

    Skipped (returns ``None``) for ``source: real`` manifests. Returns the
    ids whose stored frame differs from a fresh generation.
    """
    if manifest.source == "real":
        return None
    config = DatasetConfig(**{k: tuple(v) if isinstance(v, list) else v
                              for k, v in manifest.config.items()})
    geometry = FrameGeometry(**manifest.geometry)
    ids = manifest.ids[:limit] if limit else manifest.ids
    bad = []
    for sample, sid in zip(load_samples(ids, manifest, root), ids):
        cls = manifest.entry(sid)["class"]
        fresh = generate_sample(manifest.task, cls, sample.seed, config, geometry)
        if not np.array_equal(fresh.raw_frame, sample.raw_frame):
            bad.append(sid)
    return bad


def default_workers():
    """``VTIRE_WORKERS`` if set, else 1."""
    try:
        return max(1, int(os.environ.get("VTIRE_WORKERS", "1")))
    except ValueError:
        raise ConfigError("VTIRE_WORKERS must be an integer") from None
