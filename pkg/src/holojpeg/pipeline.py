"""Experiment orchestration: generate, compress, train, restore, reconstruct, evaluate.

A run lives in one output directory.  Every stage writes its files there and
records them, with sha256 hashes, in ``manifest.json``.  A stage whose inputs
and settings hash to the same key as last time, and whose outputs are still
intact on disk, is skipped.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arcnn
from .datasets import TEST_OBJECTS, TRAIN_OBJECTS, load_object
from .diffusion import ScanMode, to_phase_only
from .field import OpticalConfig, dequantize_phase, load_pgm, quantize_phase, save_pgm, save_phase
from .fresnel import reconstruct, synthesize_hologram
from .jpeg import JfifStream, decode, encode
from .metrics import quality_report

log = logging.getLogger(__name__)

DESK_HOLOGRAM = 256
DESK_OBJECT = 128
DESK_TRAIN = 3
DESK_TEST = 1
DESK_STRIDE = 8


class ConfigError(ValueError):
    """Bad configuration value or file."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    wavelength: float = 532e-9
    pitch: float = 8e-6
    distances: tuple = (0.3, 0.5)
    hologram_size: int = 1024
    object_size: int = 512
    quality: int = 1
    scan_mode: str = "unidirectional"
    train_objects: tuple = TRAIN_OBJECTS
    test_objects: tuple = TEST_OBJECTS
    stride: int = 9
    augment: bool = True
    learning_rate: float = 1e-3
    last_layer_scale: float = 1.0
    momentum: float = 0.9
    batch_size: int = 16
    iterations: int = 4000
    optimizer: str = "adam"
    loss: str = "wrapped"
    eval_every: int = 100
    patience: int = 3
    validation_size: int = 256
    precision: str = "float32"
    wrap_output: bool = True
    seed: int = 0
    workers: int = 1
    desk_scale: bool = False
    out: str = "run"

    def __post_init__(self):
        self.distances = tuple(float(d) for d in self.distances)
        self.train_objects = tuple(str(o) for o in self.train_objects)
        self.test_objects = tuple(str(o) for o in self.test_objects)
        if self.desk_scale:
            self.hologram_size = DESK_HOLOGRAM
            self.object_size = DESK_OBJECT
            self.train_objects = self.train_objects[:DESK_TRAIN]
            self.test_objects = self.test_objects[:DESK_TEST]
            self.stride = DESK_STRIDE
        if not self.distances or any(d <= 0 for d in self.distances):
            raise ConfigError("distances must be a non-empty list of positive values")
        if len(set(round(d, 9) for d in self.distances)) != len(self.distances):
            raise ConfigError("distances must be distinct")
        if not 1 <= self.quality <= 100:
            raise ConfigError(f"quality must be in [1, 100], got {self.quality}")
        if self.object_size > self.hologram_size:
            raise ConfigError("object must fit inside the hologram")
        if self.object_size < 11:
            raise ConfigError("object size must be at least 11 for SSIM")
        if self.hologram_size < arcnn.PATCH:
            raise ConfigError(f"hologram size must be at least {arcnn.PATCH}")
        if not self.train_objects:
            raise ConfigError("no training objects")
        if self.stride < 1 or self.workers < 1:
            raise ConfigError("stride and workers must be positive")
        names = [Path(n).stem for n in self.train_objects + self.test_objects]
        if len(set(names)) != len(names):
            raise ConfigError("object names must be unique across training and test sets")
        try:
            ScanMode(self.scan_mode)
            self.train_config()
            OpticalConfig(self.wavelength, self.pitch, self.distances[0])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def optics(self, distance: float) -> OpticalConfig:
        return OpticalConfig(self.wavelength, self.pitch, distance)

    def train_config(self, seed=None) -> arcnn.TrainConfig:
        return arcnn.TrainConfig(
            learning_rate=self.learning_rate,
            last_layer_scale=self.last_layer_scale,
            momentum=self.momentum,
            batch_size=self.batch_size,
            iterations=self.iterations,
            seed=self.seed if seed is None else seed,
            optimizer=self.optimizer,
            loss=self.loss,
            eval_every=self.eval_every,
            patience=self.patience,
            validation_size=self.validation_size,
            precision=self.precision,
        )

    def snapshot(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out")
        d.pop("workers")
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        # desk scale already trimmed the lists; re-trimming is harmless
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key: str, text: str):
    """Convert a config-file string to the type of field ``key``."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    try:
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            return tuple(float(s) for s in items) if key == "distances" else tuple(items)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, lists are comma-separated."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, value)
    return values


def load_config(path=None, **overrides) -> ExperimentConfig:
    values = read_config_file(path) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    for k in values:
        if k not in _FIELDS:
            raise ConfigError(f"unknown config key {k!r}")
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"


# -- manifest -----------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()


@dataclass
class StageRecord:
    key: str
    inputs: dict
    outputs: dict
    seconds: float


@dataclass
class RunManifest:
    config: dict = field(default_factory=dict)
    seed: int = 0
    stages: dict = field(default_factory=dict)

    def hashes(self) -> dict:
        """Every recorded output file and its hash; timings excluded."""
        out = {}
        for rec in self.stages.values():
            out.update(rec.outputs)
        return dict(sorted(out.items()))

    def to_json(self) -> str:
        d = {
            "config": self.config,
            "seed": self.seed,
            "stages": {k: dataclasses.asdict(v) for k, v in self.stages.items()},
            "hashes": self.hashes(),
        }
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        stages = {k: StageRecord(**v) for k, v in d.get("stages", {}).items()}
        return cls(d.get("config", {}), d.get("seed", 0), stages)


def _ztag(distance: float) -> str:
    return f"z{distance:g}m"


def _map(fn, items, workers):
    """Ordered map; fans out to processes when more than one worker is asked for."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*items)))


def _generate_one(obj_path, optics, size, scan_mode, out_phase, out_pgm):
    h = synthesize_hologram(load_pgm(obj_path), optics, (size, size))
    p = to_phase_only(h, mode=scan_mode)
    save_phase(p, out_phase)
    save_pgm(quantize_phase(p), out_pgm)
    return out_pgm


class Run:
    """One experiment directory and its manifest."""

    def __init__(self, cfg: ExperimentConfig, out=None):
        self.cfg = cfg
        self.root = Path(out if out is not None else cfg.out)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"
        self.manifest = RunManifest(cfg.snapshot(), cfg.seed)
        if self.manifest_path.exists():
            try:
                old = RunManifest.from_json(self.manifest_path.read_text())
                self.manifest.stages = old.stages
            except (ValueError, TypeError, KeyError):
                log.warning("ignoring unreadable manifest %s", self.manifest_path)
        self.skipped = []
        (self.root / "config.txt").write_text(format_config(cfg))

    # paths
    def rel(self, path) -> str:
        path = Path(path)
        try:
            return path.relative_to(self.root).as_posix()
        except ValueError:
            return path.resolve().as_posix()  # user-supplied input outside the run

    def object_path(self, name) -> Path:
        return self.root / "objects" / f"{Path(name).stem}.pgm"

    def zdir(self, distance) -> Path:
        return self.root / _ztag(distance)

    def hologram(self, distance, name) -> Path:
        return self.zdir(distance) / "holograms" / f"{Path(name).stem}.pgm"

    def compressed(self, distance, name) -> Path:
        return self.zdir(distance) / "compressed" / f"{Path(name).stem}.jpg"

    def model_path(self, distance) -> Path:
        return self.zdir(distance) / "model.arcn"

    def restored(self, distance, name) -> Path:
        return self.zdir(distance) / "restored" / f"{Path(name).stem}.pgm"

    def recon(self, distance, name, kind) -> Path:
        return self.zdir(distance) / "recon" / f"{Path(name).stem}_{kind}.pgm"

    @property
    def objects(self):
        return self.cfg.train_objects + self.cfg.test_objects

    # bookkeeping
    def _hash_all(self, paths) -> dict:
        return {self.rel(p): sha256_file(p) for p in paths}

    def _cached(self, stage, key) -> bool:
        rec = self.manifest.stages.get(stage)
        if rec is None or rec.key != key:
            return False
        for rel, digest in rec.outputs.items():
            p = self.root / rel
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def _stage(self, stage, settings, inputs, body):
        """Run ``body() -> output paths`` unless a valid cached result exists."""
        try:
            in_hashes = self._hash_all(inputs)
        except OSError as exc:
            raise StageError(stage, f"missing input: {exc}") from None
        key = _key(stage, settings, in_hashes)
        if self._cached(stage, key):
            log.info("%s: cached, skipping", stage)
            self.skipped.append(stage)
            return self.manifest.stages[stage]
        log.info("%s: running", stage)
        t = time.perf_counter()
        try:
            outputs = body()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        rec = StageRecord(key, in_hashes, self._hash_all(outputs), round(time.perf_counter() - t, 3))
        self.manifest.stages[stage] = rec
        self.save_manifest()
        return rec

    def save_manifest(self):
        self.manifest_path.write_text(self.manifest.to_json())

    # stages
    def ingest(self):
        size = self.cfg.object_size

        def body():
            paths = []
            for name in self.objects:
                path = self.object_path(name)
                path.parent.mkdir(parents=True, exist_ok=True)
                try:
                    img = load_object(name, size)
                except (OSError, KeyError) as exc:
                    raise StageError("ingest", f"cannot read object {name!r}: {exc}") from None
                save_pgm(img, path)
                paths.append(path)
            return paths

        external = [Path(n) for n in self.objects if Path(n).exists()]
        return self._stage("ingest", {"objects": list(self.objects), "size": size}, external, body)

    def generate(self, distance):
        stage = f"generate/{_ztag(distance)}"
        snap = self.cfg.snapshot()
        settings = {k: snap[k] for k in ("wavelength", "pitch", "hologram_size", "scan_mode")}
        inputs = [self.object_path(n) for n in self.objects]

        def body():
            jobs = []
            for name in self.objects:
                pgm = self.hologram(distance, name)
                pgm.parent.mkdir(parents=True, exist_ok=True)
                jobs.append((str(self.object_path(name)), self.cfg.optics(distance), self.cfg.hologram_size,
                             self.cfg.scan_mode, str(pgm.with_suffix(".cghp")), str(pgm)))
            _map(_generate_one, jobs, self.cfg.workers)
            return [Path(j[4]) for j in jobs] + [Path(j[5]) for j in jobs]

        return self._stage(stage, {**settings, "distance": distance}, inputs, body)

    def compress(self, distance):
        stage = f"compress/{_ztag(distance)}"
        inputs = [self.hologram(distance, n) for n in self.objects]

        def body():
            rows = []
            paths = []
            for name in self.objects:
                g = load_pgm(self.hologram(distance, name))
                s = encode(g, self.cfg.quality)
                out = self.compressed(distance, name)
                out.parent.mkdir(parents=True, exist_ok=True)
                s.save(out)
                rows.append((Path(name).stem, g.size, len(s), g.size / len(s)))
                paths.append(out)
            report = self.zdir(distance) / "compression.csv"
            with open(report, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["object", "raw_bytes", "compressed_bytes", "ratio"])
                for r in rows:
                    w.writerow([r[0], r[1], r[2], f"{r[3]:.4f}"])
            return paths + [report]

        return self._stage(stage, {"quality": self.cfg.quality, "distance": distance}, inputs, body)

    def train(self, distance, index=0):
        stage = f"train/{_ztag(distance)}"
        names = self.cfg.train_objects
        inputs = [self.hologram(distance, n) for n in names] + [self.compressed(distance, n) for n in names]
        snap = self.cfg.snapshot()
        keys = ("stride", "augment", "learning_rate", "last_layer_scale", "momentum", "batch_size",
                "iterations", "optimizer", "loss", "eval_every", "patience", "validation_size", "precision", "seed")
        settings = {k: snap[k] for k in keys}
        settings["index"] = index

        def body():
            sets = []
            for name in names:
                clean = load_pgm(self.hologram(distance, name))
                comp = decode(JfifStream.load(self.compressed(distance, name)))
                sets.append(arcnn.extract_patches(comp, clean, self.cfg.stride, self.cfg.augment))
            pairs = arcnn.PatchSet.concat(sets)
            log.info("training on %d patch pairs at %g m", len(pairs), distance)
            seed = self.cfg.seed + index
            model = arcnn.init_model(np.random.default_rng([seed, 1]), distance=distance)
            log_path = self.zdir(distance) / "train_log.csv"
            result = arcnn.train(pairs, self.cfg.train_config(seed), model=model, log_path=log_path)
            path = self.model_path(distance)
            arcnn.save_model(result.model, path)
            val = self.zdir(distance) / "validation.csv"
            with open(val, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["iter", "loss"])
                for it, v in result.validation:
                    w.writerow([it, repr(v)])
            return [path, log_path, val]

        return self._stage(stage, settings, inputs, body)

    def restore(self, distance):
        stage = f"restore/{_ztag(distance)}"
        names = self.cfg.test_objects
        inputs = [self.model_path(distance)] + [self.compressed(distance, n) for n in names]

        def body():
            model = arcnn.load_model(self.model_path(distance))
            paths = []
            for name in names:
                comp = decode(JfifStream.load(self.compressed(distance, name)))
                out = self.restored(distance, name)
                out.parent.mkdir(parents=True, exist_ok=True)
                save_pgm(arcnn.restore(model, comp, distance, wrap=self.cfg.wrap_output), out)
                paths.append(out)
            return paths

        return self._stage(stage, {"wrap": self.cfg.wrap_output}, inputs, body)

    def reconstruct(self, distance):
        stage = f"reconstruct/{_ztag(distance)}"
        names = self.cfg.test_objects
        inputs = []
        for n in names:
            inputs += [self.hologram(distance, n), self.compressed(distance, n), self.restored(distance, n)]
        optics = self.cfg.optics(distance)
        crop = (self.cfg.object_size, self.cfg.object_size)

        def body():
            paths = []
            for name in names:
                sources = {
                    "uncompressed": load_pgm(self.hologram(distance, name)),
                    "compressed": decode(JfifStream.load(self.compressed(distance, name))),
                    "restored": load_pgm(self.restored(distance, name)),
                }
                for kind, g in sources.items():
                    out = self.recon(distance, name, kind)
                    out.parent.mkdir(parents=True, exist_ok=True)
                    save_pgm(reconstruct(dequantize_phase(g, self.cfg.pitch), optics, crop), out)
                    paths.append(out)
            return paths

        return self._stage(stage, {"crop": list(crop)}, inputs, body)

    def evaluate(self):
        stage = "evaluate"
        inputs = []
        for d in self.cfg.distances:
            for n in self.cfg.test_objects:
                inputs += [self.recon(d, n, k) for k in ("uncompressed", "compressed", "restored")]
                inputs.append(self.compressed(d, n))

        def body():
            rows = evaluate_rows(self)
            path = self.root / "report.csv"
            write_report(rows, path)
            return [path]

        return self._stage(stage, {}, inputs, body)

    def pipeline(self):
        self.ingest()
        for i, d in enumerate(self.cfg.distances):
            self.generate(d)
            self.compress(d)
            self.train(d, i)
            self.restore(d)
            self.reconstruct(d)
        self.evaluate()
        self.save_manifest()
        return self.root / "report.csv"


REPORT_COLUMNS = ["object", "distance", "ratio", "psnr_compressed", "ssim_compressed",
                  "psnr_restored", "ssim_restored", "psnr_gain", "ssim_gain"]


def evaluate_rows(run: Run):
    rows = []
    for d in run.cfg.distances:
        for name in run.cfg.test_objects:
            ref = load_pgm(run.recon(d, name, "uncompressed"))
            rc = load_pgm(run.recon(d, name, "compressed"))
            rr = load_pgm(run.recon(d, name, "restored"))
            stream = JfifStream.load(run.compressed(d, name))
            raw = run.cfg.hologram_size**2
            c = quality_report(ref, rc, raw, stream)
            r = quality_report(ref, rr, raw, stream)
            rows.append({
                "object": Path(name).stem,
                "distance": d,
                "ratio": c.compression_ratio,
                "psnr_compressed": c.psnr,
                "ssim_compressed": c.ssim,
                "psnr_restored": r.psnr,
                "ssim_restored": r.ssim,
                "psnr_gain": r.psnr - c.psnr,
                "ssim_gain": r.ssim - c.ssim,
            })
    return rows


def write_report(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, REPORT_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})


def read_report(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for row in rows:
        for k in REPORT_COLUMNS[1:]:
            row[k] = float(row[k])
    return rows


def run_pipeline(cfg: ExperimentConfig, out=None) -> Run:
    run = Run(cfg, out)
    run.pipeline()
    return run
