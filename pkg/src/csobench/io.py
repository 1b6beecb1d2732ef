"""Dataset persistence and the flat ``section.key = value`` configuration file."""

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import CSO, LABEL_NAMES, SINGLE
from .sim import SceneSample, SimConfig

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
PIXELS = "pixels.f32le"


class CorruptDatasetError(ValueError):
    pass


# --------------------------------------------------------------------------
# Config


def _defaults():
    d = {f"sim.{f.name}": f.default for f in dataclasses.fields(SimConfig)}
    d.update(
        {
            "pca.n_components": 21,
            "gp.k_neighbors": 28,
            "gp.nu": 10.0,
            "gp.length_scale": 20.0,
            "gp.variance": 1.0,
            "gp.nugget": 1e-5,
            "gp.ambiguity_threshold": 0.2,
            "logreg.folds": 2,
            "logreg.lambda_grid": tuple(float(v) for v in np.logspace(-4, 4, 10)),
            "logreg.max_iter": 10_000,
            "logreg.tol": 1e-8,
            "cnn.epochs": 15,
            "cnn.batch_size": 200,
            "cnn.learning_rate": 1e-3,
            "cnn.desk": False,
            "harness.train_fraction": 0.8,
            "harness.n_bins": 12,
            "harness.runs": 100,
            "harness.cnn_runs": 100,
        }
    )
    return d


DEFAULTS = _defaults()


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if isinstance(default, tuple):
            return tuple(float(x) for x in text.split(",") if x.strip())
        if isinstance(default, int):
            return int(text)
        return float(text)
    except ValueError:
        raise ValueError(f"config key {key}: cannot parse {text!r}") from None


class Config(dict):
    """Flat mapping of ``section.key`` to typed values; every key has a default."""

    def __init__(self, values=None):
        super().__init__(DEFAULTS)
        for k, v in (values or {}).items():
            self[k] = v

    def __setitem__(self, key, value):
        if key not in DEFAULTS:
            raise KeyError(f"unknown config key {key!r}")
        default = DEFAULTS[key]
        if isinstance(value, str) and not isinstance(default, str):
            value = _parse_value(key, value, default)
        elif isinstance(default, tuple):
            value = tuple(value)
        elif isinstance(default, bool):
            value = bool(value)
        elif isinstance(default, int):
            if float(value) != int(value):
                raise ValueError(f"config key {key}: expected an integer, got {value!r}")
            value = int(value)
        elif isinstance(default, float):
            value = float(value)
        super().__setitem__(key, value)

    def to_text(self):
        return "".join(f"{k} = {_format(self[k])}\n" for k in sorted(self))

    @classmethod
    def from_text(cls, text):
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg[key] = value
        return cfg

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text())

    def section(self, name):
        prefix = name + "."
        return {k[len(prefix) :]: v for k, v in self.items() if k.startswith(prefix)}

    def sim_config(self):
        return SimConfig(**self.section("sim"))


# --------------------------------------------------------------------------
# Dataset


@dataclass
class Dataset:
    pixels: np.ndarray  # (n, H, W) float32
    labels: np.ndarray  # (n,) int
    separation: np.ndarray  # arcsec, NaN for singles
    delta_mag: np.ndarray  # NaN for singles
    primary_mag: np.ndarray
    item_ids: np.ndarray
    records: list
    config: dict

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(
            self.pixels[idx],
            self.labels[idx],
            self.separation[idx],
            self.delta_mag[idx],
            self.primary_mag[idx],
            self.item_ids[idx],
            [self.records[i] for i in idx],
            self.config,
        )


def _nan_to_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def _scene_record(scene):
    d = dataclasses.asdict(scene)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def dataset_from_cutouts(cutouts, config):
    n = len(cutouts)
    size = config.cutout_size
    records = []
    for i, c in enumerate(cutouts):
        records.append(
            {
                "item_id": i,
                "label": LABEL_NAMES[c.label],
                "byte_offset": i * size * size * 4,
                "separation_arcsec": _nan_to_none(c.separation_arcsec),
                "delta_mag": _nan_to_none(c.delta_mag),
                "scene": _scene_record(c.scene),
            }
        )
    pixels = np.stack([c.pixels for c in cutouts]).astype(np.float32) if n else np.zeros((0, size, size), np.float32)
    return _from_records(pixels, records, dataclasses.asdict(config))


def _from_records(pixels, records, config):
    def col(key):
        return np.array([np.nan if r[key] is None else r[key] for r in records], dtype=np.float64)

    return Dataset(
        pixels=pixels,
        labels=np.array([LABEL_NAMES.index(r["label"]) for r in records], dtype=np.int64),
        separation=col("separation_arcsec"),
        delta_mag=col("delta_mag"),
        primary_mag=np.array([r["scene"]["primary_mag"] for r in records], dtype=np.float64),
        item_ids=np.array([r["item_id"] for r in records], dtype=np.int64),
        records=records,
        config=config,
    )


def write_dataset(path, dataset, force=False):
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise FileExistsError(f"{path} exists and is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    blob = np.ascontiguousarray(dataset.pixels, dtype="<f4").tobytes()
    (path / PIXELS).write_bytes(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataset.config.items()},
        "cutout_shape": list(dataset.pixels.shape[1:]),
        "counts": {
            "single": int(np.sum(dataset.labels == SINGLE)),
            "cso": int(np.sum(dataset.labels == CSO)),
        },
        "pixels_sha256": hashlib.sha256(blob).hexdigest(),
        "records": dataset.records,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def load_dataset(path):
    path = Path(path)
    manifest = json.loads((path / MANIFEST).read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CorruptDatasetError(f"unsupported dataset format {manifest.get('format_version')}")
    blob = (path / PIXELS).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["pixels_sha256"]:
        raise CorruptDatasetError(f"{path / PIXELS}: content hash does not match manifest")
    h, w = manifest["cutout_shape"]
    records = manifest["records"]
    if len(blob) != len(records) * h * w * 4:
        raise CorruptDatasetError("pixel file size does not match record count")
    pixels = np.frombuffer(blob, dtype="<f4").reshape(len(records), h, w).astype(np.float32)
    return _from_records(pixels, records, manifest["config"])


def scene_from_record(rec):
    s = dict(rec["scene"])
    for k, v in s.items():
        if isinstance(v, list):
            s[k] = tuple(v)
    return SceneSample(**s)


def default_out_root():
    return Path(os.environ.get("CSOBENCH_OUT", "."))
