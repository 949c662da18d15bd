"""Per-video feature sequences, their binary format, and dataset utilities.

Sequence file layout (little-endian)::

    "FSEQ" | u32 version=1 | u32 T | u32 D | u32 fps_milli
    T*D float32 features (row-major) | T u16 phase labels | T u16 step labels

A dataset directory holds one ``<video_id>.fseq`` file per video, an
``ontology.json`` and a ``manifest.json`` listing the videos in order.
"""

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.file_utils import atomic_write_bytes, ensure_directory, read_json, write_json
from src.logger import get_logger
from .errors import FormatError, InvalidArgumentError, NumericError
from .ontology import Ontology, read_ontology, write_ontology

logger = get_logger(__name__)

MAGIC = b"FSEQ"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIII")
SEQUENCE_SUFFIX = ".fseq"
MANIFEST_FILE = "manifest.json"
ONTOLOGY_FILE = "ontology.json"
MAX_LABEL = np.iinfo(np.uint16).max


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """One video: ``T x D`` features (stored as float32) and per-frame labels.

    ``fps`` is rounded to whole millihertz, the resolution of the file format.
    """

    video_id: str
    features: np.ndarray
    phase_labels: np.ndarray
    step_labels: np.ndarray
    fps: float = 1.0

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float32)
        if features.ndim != 2 or features.shape[1] < 1:
            raise InvalidArgumentError(f"{self.video_id}: features must be T x D, got shape {features.shape}")
        if not np.isfinite(features).all():
            raise NumericError(f"{self.video_id}: features contain non-finite values")
        frames = features.shape[0]
        labels = []
        for kind in ("phase_labels", "step_labels"):
            values = np.asarray(getattr(self, kind))
            if values.shape != (frames,):
                raise InvalidArgumentError(f"{self.video_id}: {kind} must have {frames} entries, got {values.shape}")
            if values.size and not np.issubdtype(values.dtype, np.integer):
                raise InvalidArgumentError(f"{self.video_id}: {kind} must be integers")
            if values.size and values.min() < 0:
                raise InvalidArgumentError(f"{self.video_id}: {kind} must be non-negative")
            labels.append(np.ascontiguousarray(values, dtype=np.int64))
        if not (self.fps > 0 and np.isfinite(self.fps)):
            raise InvalidArgumentError(f"{self.video_id}: fps must be positive, got {self.fps}")
        fps = round(float(self.fps) * 1000) / 1000
        if fps <= 0:
            raise InvalidArgumentError(f"{self.video_id}: fps {self.fps} is below one millihertz")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "phase_labels", labels[0])
        object.__setattr__(self, "step_labels", labels[1])
        object.__setattr__(self, "fps", fps)

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def labels(self, task: str) -> np.ndarray:
        if task == "phase":
            return self.phase_labels
        if task == "step":
            return self.step_labels
        raise InvalidArgumentError(f"unknown task '{task}'")

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.fps == other.fps
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.phase_labels, other.phase_labels)
            and np.array_equal(self.step_labels, other.step_labels)
        )

    __hash__ = None


def encode_sequence(seq: FeatureSequence) -> bytes:
    """Serialize ``seq`` to the FSEQ byte layout."""
    if seq.num_frames == 0:
        raise InvalidArgumentError(f"{seq.video_id}: refusing to write a sequence with T=0")
    for kind in ("phase_labels", "step_labels"):
        if getattr(seq, kind).max() > MAX_LABEL:
            raise InvalidArgumentError(f"{seq.video_id}: {kind} exceed the u16 range")
    fps_milli = int(round(seq.fps * 1000))
    if not 0 < fps_milli <= np.iinfo(np.uint32).max:
        raise InvalidArgumentError(f"{seq.video_id}: fps {seq.fps} cannot be stored in millihertz")
    return b"".join([
        HEADER.pack(MAGIC, FORMAT_VERSION, seq.num_frames, seq.feature_dim, fps_milli),
        seq.features.astype("<f4").tobytes(),
        seq.phase_labels.astype("<u2").tobytes(),
        seq.step_labels.astype("<u2").tobytes(),
    ])


def decode_sequence(data: bytes, video_id: str) -> FeatureSequence:
    """Parse FSEQ bytes; every failure raises :class:`FormatError` with a byte offset."""
    if len(data) < HEADER.size:
        raise FormatError(f"{video_id}: truncated header", len(data))
    magic, version, frames, dim, fps_milli = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{video_id}: bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"{video_id}: unsupported version {version}", 4)
    if frames == 0:
        raise FormatError(f"{video_id}: sequence has no frames", 8)
    if dim == 0:
        raise FormatError(f"{video_id}: feature dimension is zero", 12)
    if fps_milli == 0:
        raise FormatError(f"{video_id}: fps is zero", 16)
    feature_bytes = frames * dim * 4
    label_bytes = frames * 2
    expected = HEADER.size + feature_bytes + 2 * label_bytes
    if len(data) < expected:
        raise FormatError(f"{video_id}: truncated payload, expected {expected} bytes", len(data))
    if len(data) > expected:
        raise FormatError(f"{video_id}: {len(data) - expected} trailing bytes", expected)

    offset = HEADER.size
    features = np.frombuffer(data, dtype="<f4", count=frames * dim, offset=offset).reshape(frames, dim)
    offset += feature_bytes
    phases = np.frombuffer(data, dtype="<u2", count=frames, offset=offset)
    offset += label_bytes
    steps = np.frombuffer(data, dtype="<u2", count=frames, offset=offset)
    try:
        return FeatureSequence(video_id, features.astype(np.float32), phases.astype(np.int64),
                               steps.astype(np.int64), fps_milli / 1000.0)
    except NumericError as exc:
        raise FormatError(f"{video_id}: {exc}", HEADER.size) from exc


def write_sequence(seq: FeatureSequence, path):
    """Write ``seq`` to ``path`` in the FSEQ format."""
    atomic_write_bytes(path, encode_sequence(seq))
    logger.debug("Wrote %s (%d frames) to %s", seq.video_id, seq.num_frames, path)
    return path


def read_sequence(path, video_id: Optional[str] = None) -> FeatureSequence:
    """Read an FSEQ file; the video id defaults to the file stem."""
    with open(path, 'rb') as f:
        data = f.read()
    video_id = video_id or os.path.splitext(os.path.basename(path))[0]
    return decode_sequence(data, video_id)


@dataclass(frozen=True)
class Dataset:
    """An ontology with an ordered, immutable collection of sequences."""

    ontology: Ontology
    sequences: Tuple[FeatureSequence, ...]
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        sequences = tuple(self.sequences)
        ids = [s.video_id for s in sequences]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("video ids must be unique within a dataset")
        dims = {s.feature_dim for s in sequences}
        if len(dims) > 1:
            raise InvalidArgumentError(f"feature dimension differs across videos: {sorted(dims)}")
        for seq in sequences:
            if seq.num_frames and (seq.phase_labels.max() >= self.ontology.num_phases
                                   or seq.step_labels.max() >= self.ontology.num_steps):
                raise InvalidArgumentError(f"{seq.video_id}: labels exceed the ontology ranges")
        object.__setattr__(self, "sequences", sequences)

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def ids(self) -> List[str]:
        return [s.video_id for s in self.sequences]

    @property
    def feature_dim(self) -> int:
        if not self.sequences:
            raise InvalidArgumentError("empty dataset has no feature dimension")
        return self.sequences[0].feature_dim

    @property
    def num_frames(self) -> int:
        return sum(s.num_frames for s in self.sequences)

    def by_id(self, video_id: str) -> FeatureSequence:
        for seq in self.sequences:
            if seq.video_id == video_id:
                return seq
        raise InvalidArgumentError(f"unknown video id '{video_id}'")

    def subset(self, video_ids: Iterable[str]) -> "Dataset":
        return Dataset(self.ontology, tuple(self.by_id(v) for v in video_ids), self.metadata)

    def histogram(self, task: str) -> np.ndarray:
        """Per-class frame counts for ``task`` over all videos."""
        classes = len(self.ontology.classes(task))
        counts = np.zeros(classes, dtype=np.int64)
        for seq in self.sequences:
            counts += np.bincount(seq.labels(task), minlength=classes)
        return counts


def write_dataset(dataset: Dataset, directory, metadata: Optional[Dict] = None):
    """Write sequences, ontology and manifest into ``directory``."""
    ensure_directory(directory)
    for seq in dataset:
        write_sequence(seq, os.path.join(directory, seq.video_id + SEQUENCE_SUFFIX))
    write_ontology(dataset.ontology, os.path.join(directory, ONTOLOGY_FILE))
    manifest = {
        "videos": dataset.ids,
        "ontology": ONTOLOGY_FILE,
        "feature_dim": dataset.feature_dim,
        "num_frames": dataset.num_frames,
        "metadata": metadata if metadata is not None else dataset.metadata,
    }
    write_json(os.path.join(directory, MANIFEST_FILE), manifest)
    logger.info("Dataset with %d videos (%d frames) written to %s", len(dataset), dataset.num_frames, directory)
    return directory


def load_dataset(directory, ontology_path=None, stride: int = 1) -> Dataset:
    """Load a dataset directory, optionally subsampling every video by ``stride``."""
    manifest_path = os.path.join(directory, MANIFEST_FILE)
    try:
        manifest = read_json(manifest_path)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {manifest_path} is not valid JSON: {exc.msg}", exc.pos) from exc
    try:
        videos = list(manifest["videos"])
        dim = int(manifest["feature_dim"])
        ontology_file = manifest.get("ontology", ONTOLOGY_FILE)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"manifest {manifest_path} is missing fields: {exc}") from exc

    ontology = read_ontology(ontology_path or os.path.join(directory, ontology_file))
    sequences = []
    for video_id in videos:
        seq = read_sequence(os.path.join(directory, video_id + SEQUENCE_SUFFIX), video_id)
        if seq.feature_dim != dim:
            raise FormatError(f"{video_id}: feature dimension {seq.feature_dim} != manifest {dim}", 12)
        sequences.append(subsample(seq, stride) if stride != 1 else seq)
    logger.info("Loaded %d videos from %s", len(sequences), directory)
    return Dataset(ontology, tuple(sequences), manifest.get("metadata", {}))


def subsample(seq: FeatureSequence, stride: int) -> FeatureSequence:
    """Keep frames ``0, stride, 2*stride, ...``; the frame rate drops by ``stride``."""
    if isinstance(stride, bool) or int(stride) != stride or stride < 1:
        raise InvalidArgumentError(f"stride must be a positive integer, got {stride}")
    stride = int(stride)
    return FeatureSequence(
        seq.video_id,
        seq.features[::stride],
        seq.phase_labels[::stride],
        seq.step_labels[::stride],
        seq.fps / stride,
    )


@dataclass(frozen=True)
class Fold:
    index: int
    test: Tuple[str, ...]
    train: Tuple[str, ...]
    val: Tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    folds: Tuple[Fold, ...]

    def to_dict(self):
        return {
            "k": self.k,
            "seed": self.seed,
            "folds": [
                {"index": f.index, "test": list(f.test), "train": list(f.train), "val": list(f.val)}
                for f in self.folds
            ],
        }


def kfold_split(video_ids: Sequence[str], k: int, val_count: int, seed: int) -> FoldPlan:
    """Seeded shuffle, contiguous test blocks, then train/val from the rest.

    The last ``val_count`` remaining ids (in shuffled order) form the
    validation split; everything else trains.
    """
    ids = list(video_ids)
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError("video ids must be unique")
    if k < 2:
        raise InvalidArgumentError(f"cross-validation needs k >= 2, got {k}")
    if len(ids) < k:
        raise InvalidArgumentError(f"{len(ids)} videos are too few for {k} folds")
    if val_count < 0:
        raise InvalidArgumentError("val_count must be non-negative")

    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    folds = []
    for index, block in enumerate(np.array_split(np.arange(len(ids)), k)):
        test = [shuffled[i] for i in block]
        taken = set(test)
        rest = [v for v in shuffled if v not in taken]
        if val_count >= len(rest):
            raise InvalidArgumentError(
                f"fold {index}: {len(rest)} non-test videos cannot give {val_count} validation videos and a training set"
            )
        cut = len(rest) - val_count
        folds.append(Fold(index, tuple(test), tuple(rest[:cut]), tuple(rest[cut:])))
    return FoldPlan(k, seed, tuple(folds))


def median_frequency_weights(label_sequences, num_classes: int) -> np.ndarray:
    """Median frequency balancing over frames pooled across all sequences.

    ``w_c = median(freq) / freq_c`` over classes that occur; classes that
    never occur get weight 0. The ratio is taken on raw counts, which equals
    the frequency ratio without the rounding of a division by the total.
    """
    arrays = [np.asarray(s, dtype=np.int64).ravel() for s in label_sequences]
    labels = np.concatenate(arrays) if arrays else np.zeros(0, dtype=np.int64)
    if labels.size == 0:
        raise InvalidArgumentError("median frequency weights need at least one labelled frame")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise InvalidArgumentError(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(labels, minlength=num_classes)
    present = counts > 0
    weights = np.zeros(num_classes, dtype=np.float64)
    weights[present] = np.median(counts[present]) / counts[present]
    absent = np.flatnonzero(~present)
    if absent.size:
        logger.warning("Classes absent from the weighting frames (weight 0): %s", absent.tolist())
    return weights


def absent_classes(weights: np.ndarray) -> List[int]:
    """Class ids that :func:`median_frequency_weights` recorded as absent."""
    return np.flatnonzero(np.asarray(weights) == 0).tolist()
