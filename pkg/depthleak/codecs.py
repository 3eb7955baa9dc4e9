import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .arch import ArchitectureSpec
from .attack_data import TimingDataset, TimingSample
from .constants import (
    CIFAR10_RECORD_BYTES,
    CIFAR10_SHAPE,
    IDX_UBYTE,
    TIMING_CSV_HEADER,
    DatasetKind,
)
from .exceptions import DatasetFormatError
from .training import LabeledDataset
from .validation import ArchValidator, DatasetValidator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetSource:
    """
    Where a labeled dataset comes from.

    Attributes:
        kind: "synthetic-blobs", "cifar10-binary" or "idx"
        train_paths: CIFAR-10 batch files, or [images, labels] IDX files, for training
        test_paths: Same layout as train_paths, for the test split
        val_fraction: Fraction of training records moved to the "val" split
        num_classes: Synthetic only, number of blobs
        n_points: Synthetic only, total examples
        input_shape: Synthetic only, (height, width, channels)
        spread: Synthetic only, per-pixel noise around each class centre
        separation: Synthetic only, scale of the class centres around 0.5; 1 spreads
            them over [0.2, 0.8], smaller values make the classes overlap
        test_fraction: Synthetic only, fraction tagged "test"
        seed: Seed of class centres (synthetic) and of the val split
        sample_seed: Synthetic only, seed of the draws; the same centres with a
            new sample_seed give fresh points from the same distribution
    """
    kind: DatasetKind = "synthetic-blobs"
    train_paths: tuple[str, ...] = ()
    test_paths: tuple[str, ...] = ()
    val_fraction: float = 0.2
    num_classes: int = 4
    n_points: int = 512
    input_shape: tuple[int, int, int] = (8, 8, 3)
    spread: float = 0.15
    separation: float = 1.0
    test_fraction: float = 0.2
    seed: int = 7
    sample_seed: int = 0


class DatasetCodec:
    """Decodes image datasets from their on-disk binary formats."""

    @staticmethod
    def decode_cifar10(data: bytes) -> tuple[np.ndarray, np.ndarray]:
        """
        Decode a CIFAR-10 binary batch.

        Each 3073-byte record is one label byte followed by 1024 red, 1024
        green and 1024 blue bytes, each plane row-major.

        Returns:
            Images of shape (N, 32, 32, 3) scaled to [0, 1] and uint8 labels
        """
        if len(data) == 0 or len(data) % CIFAR10_RECORD_BYTES:
            offset = (len(data) // CIFAR10_RECORD_BYTES) * CIFAR10_RECORD_BYTES
            raise DatasetFormatError(
                f"CIFAR-10 batch length {len(data)} is not a positive multiple of {CIFAR10_RECORD_BYTES}",
                offset,
            )

        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR10_RECORD_BYTES)
        labels = records[:, 0]
        bad = np.flatnonzero(labels > 9)
        if bad.size:
            raise DatasetFormatError(f"invalid CIFAR-10 label {labels[bad[0]]}", int(bad[0]) * CIFAR10_RECORD_BYTES)

        height, width, channels = CIFAR10_SHAPE
        images = records[:, 1:].reshape(-1, channels, height, width).transpose(0, 2, 3, 1)
        return images.astype(np.float64) / 255.0, labels.copy()

    @staticmethod
    def decode_idx(data: bytes) -> np.ndarray:
        """
        Decode an IDX file of unsigned bytes.

        The header is two zero bytes, a type byte (0x08) and a dimension count,
        followed by one big-endian uint32 per dimension.

        Returns:
            The uint8 array in row-major order
        """
        if len(data) < 4:
            raise DatasetFormatError("IDX file shorter than its magic number", len(data))
        if data[0] != 0 or data[1] != 0:
            raise DatasetFormatError("IDX magic number must start with two zero bytes", 0)
        if data[2] != IDX_UBYTE:
            raise DatasetFormatError(f"unsupported IDX element type 0x{data[2]:02x}", 2)

        ndim = data[3]
        header_len = 4 + 4 * ndim
        if len(data) < header_len:
            raise DatasetFormatError(f"IDX header declares {ndim} dimensions but is truncated", len(data))

        dims = tuple(int(d) for d in np.frombuffer(data, dtype=">u4", count=ndim, offset=4))
        expected = header_len + int(np.prod(dims, dtype=np.int64))
        if len(data) != expected:
            raise DatasetFormatError(
                f"IDX payload length {len(data) - header_len} does not match dimensions {dims}",
                min(len(data), expected),
            )
        return np.frombuffer(data, dtype=np.uint8, offset=header_len).reshape(dims)


def _read(path: str | Path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    return path.read_bytes()


def _val_split(n: int, fraction: float, seed: int) -> np.ndarray:
    splits = np.full(n, "train", dtype="<U5")
    n_val = int(round(fraction * n))
    if n_val:
        splits[np.random.default_rng(seed).permutation(n)[:n_val]] = "val"
    return splits


def synthetic_blobs(source: DatasetSource) -> LabeledDataset:
    """
    Gaussian blobs around per-class centres in image space.

    Class centres depend only on source.seed; the points depend on
    (seed, sample_seed). Classes are balanced to within one example.
    """
    ArchValidator.validate_count("num_classes", source.num_classes, minimum=2)
    ArchValidator.validate_count("n_points", source.n_points)
    ArchValidator.validate_shape(source.input_shape)
    DatasetValidator.validate_fraction("separation", source.separation, open_low=True)

    half_width = 0.3 * source.separation
    centres = np.random.default_rng(source.seed).uniform(
        0.5 - half_width, 0.5 + half_width, size=(source.num_classes, *source.input_shape)
    )
    rng = np.random.default_rng([source.seed, source.sample_seed])
    labels = rng.permutation(np.arange(source.n_points) % source.num_classes)
    noise = rng.normal(0.0, source.spread, size=(source.n_points, *source.input_shape))
    inputs = np.clip(centres[labels] + noise, 0.0, 1.0)

    n_test = int(round(source.test_fraction * source.n_points))
    n_val = int(round(source.val_fraction * source.n_points))
    splits = np.array(["train"] * (source.n_points - n_val - n_test) + ["val"] * n_val + ["test"] * n_test)
    return LabeledDataset(inputs, labels, splits)


def _load_records(kind: DatasetKind, paths: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
    if kind == "cifar10-binary":
        decoded = [DatasetCodec.decode_cifar10(_read(path)) for path in paths]
        return np.concatenate([d[0] for d in decoded]), np.concatenate([d[1] for d in decoded])

    if len(paths) != 2:
        raise ValueError(f"IDX sources need [images, labels] paths, got {len(paths)}")
    images = DatasetCodec.decode_idx(_read(paths[0]))
    labels = DatasetCodec.decode_idx(_read(paths[1]))
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise ValueError(f"IDX images {images.shape} and labels {labels.shape} do not pair up")
    return images[..., None].astype(np.float64) / 255.0, labels


def load_dataset(source: DatasetSource) -> LabeledDataset:
    """
    Load a labeled dataset with train/val/test tags.

    Args:
        source: Synthetic generator settings, or CIFAR-10/IDX file paths

    Returns:
        LabeledDataset with inputs scaled to [0, 1]

    Raises:
        FileNotFoundError: If a referenced file is missing
        DatasetFormatError: If a file does not match its binary format
    """
    DatasetValidator.validate_fraction("val_fraction", source.val_fraction)
    if source.kind == "synthetic-blobs":
        return synthetic_blobs(source)

    if not source.train_paths:
        raise ValueError(f"{source.kind} sources need at least one training path")

    train_x, train_y = _load_records(source.kind, source.train_paths)
    parts_x, parts_y = [train_x], [train_y]
    parts_s = [_val_split(len(train_x), source.val_fraction, source.seed)]
    if source.test_paths:
        test_x, test_y = _load_records(source.kind, source.test_paths)
        parts_x.append(test_x)
        parts_y.append(test_y)
        parts_s.append(np.full(len(test_x), "test", dtype="<U5"))

    dataset = LabeledDataset(np.concatenate(parts_x), np.concatenate(parts_y), np.concatenate(parts_s))
    logger.info("Loaded %d %s records", len(dataset), source.kind)
    return dataset


def save_labeled(data: LabeledDataset, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        np.savez(f, inputs=data.inputs, labels=data.labels, splits=data.splits)
    return path


def load_labeled(path: str | Path) -> LabeledDataset:
    with np.load(_checked(path)) as archive:
        return LabeledDataset(archive["inputs"], archive["labels"], archive["splits"])


def _checked(path: str | Path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Artifact not found: {path}")
    return path


def write_timing_csv(ds: TimingDataset, path: str | Path) -> Path:
    """
    Write a timing dataset as CSV with the fixed header.

    Floats are written in their shortest round-trip form, so reading the file
    back restores every field exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TIMING_CSV_HEADER)
        for s in ds.samples:
            writer.writerow([s.arch_id, s.depth, s.n_params, repr(float(s.mean_time_s)), s.n_runs, s.hardware_tag])
    return path


def read_timing_csv(path: str | Path) -> TimingDataset:
    """Read a CSV written by write_timing_csv."""
    with _checked(path).open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != TIMING_CSV_HEADER:
            raise DatasetFormatError(f"timing CSV header must be {','.join(TIMING_CSV_HEADER)}", 0)

        samples = []
        for row in reader:
            if len(row) != len(TIMING_CSV_HEADER):
                raise ValueError(f"timing CSV row {reader.line_num} has {len(row)} fields")
            samples.append(TimingSample(
                arch_id=row[0],
                depth=int(row[1]),
                n_params=int(row[2]),
                mean_time_s=float(row[3]),
                n_runs=int(row[4]),
                hardware_tag=row[5],
            ))

    cost_model = bool(samples) and all(s.hardware_tag.startswith("cost-model:") for s in samples)
    return TimingDataset(
        samples=tuple(samples),
        mode="cost-model" if cost_model else "wall",
        cost_model_id=samples[0].hardware_tag if cost_model else None,
    )


def write_arch_pool(archs: Iterable[ArchitectureSpec], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([arch.to_dict() for arch in archs], indent=1) + "\n")
    return path


def read_arch_pool(path: str | Path) -> list[ArchitectureSpec]:
    return [ArchitectureSpec.from_dict(entry) for entry in json.loads(_checked(path).read_text())]
