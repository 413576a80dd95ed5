"""Dataset manifests and the sectioned experiment config file."""

from __future__ import annotations

import configparser
import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import cv2

from .cocest import EstimationConfig
from .dppsf import MAX_RADIUS
from .imgcore import atomic_write_text
from .thinlens import CAMERA_CONFIG_KEYS, CameraModel


@dataclass(frozen=True)
class ManifestRow:
    left: Path
    right: Path
    target: Path | None = None
    depth: Path | None = None


@dataclass
class Manifest:
    rows: list
    base_dir: Path


def _image_size(path: Path):
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ValueError(f"manifest references undecodable image: {path}")
    return img.shape[:2]


def load_manifest(path) -> Manifest:
    """Read a header-bearing CSV manifest (columns left, right, target,
    depth; the last two optional). Relative paths resolve against the
    manifest's directory; every referenced file must exist and each row's
    left/right views must have matching dimensions."""
    path = Path(path)
    base = path.parent.resolve()
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty manifest")
        known = {"left", "right", "target", "depth"}
        unknown = set(reader.fieldnames) - known
        if unknown:
            raise ValueError(f"{path}: unknown manifest columns {sorted(unknown)}")
        if not {"left", "right"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: manifest needs 'left' and 'right' columns")
        for lineno, record in enumerate(reader, start=2):
            def resolve(key):
                value = (record.get(key) or "").strip()
                if not value:
                    return None
                p = Path(value)
                p = p if p.is_absolute() else base / p
                if not p.is_file():
                    raise ValueError(f"{path}:{lineno}: missing file {p}")
                return p

            left, right = resolve("left"), resolve("right")
            if left is None or right is None:
                raise ValueError(f"{path}:{lineno}: row needs left and right paths")
            if _image_size(left) != _image_size(right):
                raise ValueError(f"{path}:{lineno}: left/right dimensions differ")
            rows.append(ManifestRow(left, right, resolve("target"), resolve("depth")))
    if not rows:
        raise ValueError(f"{path}: manifest has no rows")
    return Manifest(rows, base)


def save_manifest(manifest: Manifest, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["left", "right", "target", "depth"])
    for row in manifest.rows:
        writer.writerow([
            str(row.left), str(row.right),
            "" if row.target is None else str(row.target),
            "" if row.depth is None else str(row.depth),
        ])
    atomic_write_text(path, buf.getvalue())


@dataclass
class RunConfig:
    """Parsed experiment configuration (all sections optional)."""

    camera: CameraModel | None = None
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    n_branches: int = 4
    thresholds: tuple | None = None  # None means "fit"
    crop_size: int = 512
    crop_overlap: float = 0.6
    crop_discard: float = 0.3


_ESTIMATION_KEYS = {"lambda", "residual_smooth_sigma", "max_radius",
                    "smoothing_iters", "confidence_floor"}
_MODEL_KEYS = {"M", "thresholds"}
_PATCH_KEYS = {"size", "overlap", "discard"}


def load_run_config(path) -> RunConfig:
    """Parse the sectioned key=value experiment config.

    Sections: ``[camera]`` (thin-lens keys), ``[estimation]``, ``[model]``
    (M plus explicit thresholds or ``fit``), ``[patch]``. Unknown sections
    or keys are errors.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    read = parser.read(path)
    if not read:
        raise OSError(f"cannot read config file: {path}")
    cfg = RunConfig()
    known_sections = {"camera", "estimation", "model", "patch"}
    unknown = set(parser.sections()) - known_sections
    if unknown:
        raise ValueError(f"{path}: unknown config sections {sorted(unknown)}")

    if parser.has_section("camera"):
        entries = dict(parser.items("camera"))
        bad = set(entries) - set(CAMERA_CONFIG_KEYS)
        if bad:
            raise ValueError(f"{path}: unknown camera keys {sorted(bad)}")
        cfg.camera = CameraModel(**{k: float(v) for k, v in entries.items()})

    if parser.has_section("estimation"):
        entries = dict(parser.items("estimation"))
        bad = set(entries) - _ESTIMATION_KEYS
        if bad:
            raise ValueError(f"{path}: unknown estimation keys {sorted(bad)}")
        radius = int(float(entries.get("max_radius", MAX_RADIUS)))
        cfg.estimation = EstimationConfig(
            lam=float(entries.get("lambda", 10.0)),
            residual_smooth_sigma=float(entries.get("residual_smooth_sigma", 2.0)),
            candidates=tuple(range(-radius, radius + 1)),
            smoothing_iters=int(float(entries.get("smoothing_iters", 20))),
            confidence_floor=float(entries.get("confidence_floor", 0.1)),
        )

    if parser.has_section("model"):
        entries = dict(parser.items("model"))
        bad = set(entries) - _MODEL_KEYS
        if bad:
            raise ValueError(f"{path}: unknown model keys {sorted(bad)}")
        cfg.n_branches = int(entries.get("M", 4))
        raw = entries.get("thresholds", "fit").strip()
        if raw != "fit":
            cfg.thresholds = tuple(float(v) for v in raw.split(","))

    if parser.has_section("patch"):
        entries = dict(parser.items("patch"))
        bad = set(entries) - _PATCH_KEYS
        if bad:
            raise ValueError(f"{path}: unknown patch keys {sorted(bad)}")
        cfg.crop_size = int(entries.get("size", 512))
        cfg.crop_overlap = float(entries.get("overlap", 0.6))
        cfg.crop_discard = float(entries.get("discard", 0.3))
        if not 0 < cfg.crop_size:
            raise ValueError(f"{path}: crop size must be positive")
        if not 0.0 <= cfg.crop_overlap < 1.0:
            raise ValueError(f"{path}: overlap must be in [0, 1)")
        if not 0.0 <= cfg.crop_discard < 1.0:
            raise ValueError(f"{path}: discard must be in [0, 1)")
    return cfg
