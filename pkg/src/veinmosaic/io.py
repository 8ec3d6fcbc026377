"""Dataset and result file formats.

A dataset directory holds ``frames/%06d.png`` (8-bit grayscale),
``forces.csv``, an optional ``groundtruth.csv`` and a flat ``config.txt``
with ``key = value`` lines. Results are ``mosaic.png``, ``path.csv`` and
``metrics.json``. All files are written atomically (temp + rename) and
numbers are serialized with 6 significant digits.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .core import CameraIntrinsics, ForceSample, Image, MaterialParams
from .exceptions import DatasetError

FORCES_HEADER = ["frame_id", "f1_n", "f2_n", "f3_n", "f4_n"]
GROUNDTRUTH_HEADER = ["frame_id", "x_mm", "y_mm", "yaw_deg"]
PATH_HEADER = ["frame_id", "x_mm", "y_mm", "skipped"]


def format_number(x: float) -> str:
    """Fixed serialization: 6 significant digits, '.' decimal."""
    return f"{float(x):.6g}"


def round_trip_number(x: float) -> float:
    """The value a serialized number parses back to."""
    return float(format_number(x))


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(Path(path), text.encode("utf-8"))


def write_image(path: Path, img: Image) -> None:
    """Write an image as 8-bit grayscale PNG (mask is not persisted)."""
    ok, buf = cv2.imencode(".png", img.data)
    if not ok:
        raise IOError(f"could not encode image for {path}")
    _atomic_write_bytes(Path(path), buf.tobytes())


def read_image(path: Path, mask: np.ndarray | None = None) -> Image:
    data = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if data is None:
        raise DatasetError(f"unreadable image file: {path}")
    if mask is not None and mask.shape != data.shape:
        raise DatasetError(
            f"mask shape {mask.shape} does not fit image {data.shape}: {path}"
        )
    return Image(data, mask)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(
                format_number(v) if isinstance(v, float) else str(v) for v in row
            )
        )
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def _read_csv(path: Path, required: list[str]) -> list[dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for col in required:
            if col not in fields:
                raise DatasetError(f"{path}: missing column {col!r}")
        try:
            return list(reader)
        except csv.Error as exc:
            raise DatasetError(f"{path}: malformed CSV ({exc})") from exc


def write_forces_csv(path: Path, samples: list[ForceSample]) -> None:
    rows = [[s.frame_id, s.f1, s.f2, s.f3, s.f4] for s in samples]
    _write_csv(path, FORCES_HEADER, rows)


def read_forces_csv(path: Path) -> list[ForceSample]:
    samples = []
    for row in _read_csv(path, FORCES_HEADER):
        try:
            samples.append(
                ForceSample(
                    frame_id=int(row["frame_id"]),
                    f1=float(row["f1_n"]),
                    f2=float(row["f2_n"]),
                    f3=float(row["f3_n"]),
                    f4=float(row["f4_n"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: bad force row {row!r} ({exc})") from exc
    return samples


def write_groundtruth_csv(path: Path, rows: list[tuple[int, float, float, float]]) -> None:
    _write_csv(path, GROUNDTRUTH_HEADER, [list(r) for r in rows])


def read_groundtruth_csv(path: Path) -> list[tuple[int, float, float, float]]:
    out = []
    for row in _read_csv(path, GROUNDTRUTH_HEADER):
        try:
            out.append(
                (
                    int(row["frame_id"]),
                    float(row["x_mm"]),
                    float(row["y_mm"]),
                    float(row["yaw_deg"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: bad truth row {row!r} ({exc})") from exc
    return out


def write_path_csv(path: Path, rows: list[tuple[int, float, float, bool]]) -> None:
    _write_csv(path, PATH_HEADER, [[fid, x, y, int(sk)] for fid, x, y, sk in rows])


def read_path_csv(path: Path) -> list[tuple[int, float, float, bool]]:
    out = []
    for row in _read_csv(path, PATH_HEADER[:3]):
        try:
            out.append(
                (
                    int(row["frame_id"]),
                    float(row["x_mm"]),
                    float(row["y_mm"]),
                    bool(int(row.get("skipped", "0") or 0)),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: bad path row {row!r} ({exc})") from exc
    return out


def write_metrics_json(path: Path, metrics: dict) -> None:
    atomic_write_text(Path(path), json.dumps(metrics, indent=2, sort_keys=True) + "\n")


KAPPA_HEADER = ["sample_id", "f1_n", "f2_n", "f3_n", "f4_n", "ref_theta_x_deg"]
PAIRS_HEADER = ["pair_id", "f1_n", "f2_n", "f3_n", "f4_n"]


def write_kappa_csv(path: Path, rows: list[tuple]) -> None:
    _write_csv(path, KAPPA_HEADER, [list(map(float, r)) for r in rows])


def read_kappa_csv(path: Path) -> list[tuple[ForceSample, float]]:
    """Angle-referenced calibration samples: (ForceSample, theta_x radians)."""
    out = []
    for row in _read_csv(path, KAPPA_HEADER):
        try:
            fs = ForceSample(
                frame_id=int(float(row["sample_id"])),
                f1=float(row["f1_n"]),
                f2=float(row["f2_n"]),
                f3=float(row["f3_n"]),
                f4=float(row["f4_n"]),
            )
            out.append((fs, np.radians(float(row["ref_theta_x_deg"]))))
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: bad kappa row {row!r} ({exc})") from exc
    return out


def write_pairs_csv(path: Path, rows: list[tuple]) -> None:
    _write_csv(path, PAIRS_HEADER, [list(map(float, r)) for r in rows])


def read_pairs_csv(path: Path) -> list[ForceSample]:
    out = []
    for row in _read_csv(path, PAIRS_HEADER):
        try:
            out.append(
                ForceSample(
                    frame_id=int(float(row["pair_id"])),
                    f1=float(row["f1_n"]),
                    f2=float(row["f2_n"]),
                    f3=float(row["f3_n"]),
                    f4=float(row["f4_n"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: bad pair row {row!r} ({exc})") from exc
    return out


@dataclass(frozen=True)
class DatasetConfig:
    """Everything needed to interpret a dataset directory."""

    material: MaterialParams
    intrinsics: CameraIntrinsics
    stretch_ratio: float = 1.13
    peak_threshold: float = 1.0
    edge_threshold: float = 10.0
    mask_shape: str = "circle"
    mask_radius_frac: float = 0.48

    def frame_mask(self, height: int, width: int) -> np.ndarray | None:
        """Scanner-area validity mask for a frame of the given size."""
        if self.mask_shape == "none":
            return None
        if self.mask_shape != "circle":
            raise DatasetError(f"unknown mask shape {self.mask_shape!r}")
        radius = self.mask_radius_frac * min(width, height)
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        xs, ys = np.meshgrid(np.arange(width), np.arange(height))
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2


def write_config(path: Path, cfg: DatasetConfig) -> None:
    mp, ci = cfg.material, cfg.intrinsics
    pairs = [
        ("material.youngs_modulus_pa", mp.youngs_modulus),
        ("material.poisson_ratio", mp.poisson_ratio),
        ("material.hooke_constant_n_mm", mp.hooke_constant),
        ("material.scanner_area_m2", mp.scanner_area),
        ("scanner.sensor_sep_x_mm", mp.sensor_sep_x),
        ("scanner.sensor_sep_y_mm", mp.sensor_sep_y),
        ("scanner.mask_shape", cfg.mask_shape),
        ("scanner.mask_radius_frac", cfg.mask_radius_frac),
        ("camera.fx_px", ci.fx),
        ("camera.fy_px", ci.fy),
        ("camera.cx_px", ci.cx),
        ("camera.cy_px", ci.cy),
        ("camera.pixel_pitch_mm", ci.pixel_pitch),
        ("asift.stretch_ratio", cfg.stretch_ratio),
        ("asift.peak_threshold", cfg.peak_threshold),
        ("asift.edge_threshold", cfg.edge_threshold),
    ]
    lines = ["# veinmosaic dataset configuration"]
    for key, value in pairs:
        if isinstance(value, str):
            lines.append(f"{key} = {value}")
        else:
            lines.append(f"{key} = {format_number(value)}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DatasetError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def read_config(path: Path) -> DatasetConfig:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    values = parse_config_text(path.read_text())

    def num(key: str, default: float | None = None) -> float:
        if key not in values:
            if default is None:
                raise DatasetError(f"{path}: missing config key {key!r}")
            return default
        try:
            return float(values[key])
        except ValueError as exc:
            raise DatasetError(f"{path}: bad number for {key!r}") from exc

    material = MaterialParams(
        youngs_modulus=num("material.youngs_modulus_pa"),
        poisson_ratio=num("material.poisson_ratio"),
        hooke_constant=num("material.hooke_constant_n_mm"),
        scanner_area=num("material.scanner_area_m2"),
        sensor_sep_x=num("scanner.sensor_sep_x_mm"),
        sensor_sep_y=num("scanner.sensor_sep_y_mm"),
    )
    intrinsics = CameraIntrinsics(
        fx=num("camera.fx_px"),
        fy=num("camera.fy_px"),
        cx=num("camera.cx_px"),
        cy=num("camera.cy_px"),
        pixel_pitch=num("camera.pixel_pitch_mm"),
    )
    return DatasetConfig(
        material=material,
        intrinsics=intrinsics,
        stretch_ratio=num("asift.stretch_ratio", 1.13),
        peak_threshold=num("asift.peak_threshold", 1.0),
        edge_threshold=num("asift.edge_threshold", 10.0),
        mask_shape=values.get("scanner.mask_shape", "none"),
        mask_radius_frac=num("scanner.mask_radius_frac", 0.48),
    )


def frame_path(dataset_dir: Path, frame_id: int) -> Path:
    return Path(dataset_dir) / "frames" / f"{frame_id:06d}.png"


@dataclass(frozen=True)
class Dataset:
    """An in-memory dataset: config, frames, forces and optional truth."""

    config: DatasetConfig
    frames: list[Image]
    forces: list[ForceSample]
    groundtruth: list[tuple[int, float, float, float]] | None


def load_dataset(dataset_dir: Path) -> Dataset:
    """Load a dataset directory, applying the configured scanner mask."""
    dataset_dir = Path(dataset_dir)
    cfg = read_config(dataset_dir / "config.txt")
    forces = read_forces_csv(dataset_dir / "forces.csv")
    if not forces:
        raise DatasetError(f"{dataset_dir}: forces.csv has no rows")
    frames = []
    mask = None
    for fs in forces:
        path = frame_path(dataset_dir, fs.frame_id)
        if not path.exists():
            raise DatasetError(f"missing frame image: {path}")
        img = read_image(path)
        if mask is None or mask.shape != img.shape:
            mask = cfg.frame_mask(img.height, img.width)
        frames.append(Image(img.data, mask))
    truth_path = dataset_dir / "groundtruth.csv"
    truth = read_groundtruth_csv(truth_path) if truth_path.exists() else None
    return Dataset(config=cfg, frames=frames, forces=forces, groundtruth=truth)
