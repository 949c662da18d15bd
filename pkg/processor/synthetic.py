"""Synthetic hierarchical workflow videos.

Each video walks the phases left to right, skipping some at random. A phase
expands to its steps in order, every step held for a gamma-distributed
number of frames. A frame's feature vector is the center of its step plus
Gaussian noise, smoothed by a centered moving average.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.logger import get_logger
from .dataset import Dataset, FeatureSequence
from .errors import InvalidArgumentError
from .ontology import Ontology, default_ontology

logger = get_logger(__name__)

NULL_STEP = 0


@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    """Workflow, timing and appearance model of a synthetic dataset.

    Attributes
    ----------
    ontology : Ontology
        Classes; its hierarchy is replaced by ``phase_steps``.
    phase_order : tuple of int
        Phases in workflow order.
    skip_probabilities : numpy.ndarray
        Per phase id, probability that a video skips the phase.
    phase_steps : dict
        Phase id -> ordered step ids performed during the phase.
    dwell_means, dwell_stds : numpy.ndarray
        Per step id, mean and standard deviation of a step's duration in frames.
    centers : numpy.ndarray
        ``num_steps x D`` feature cluster centers.
    noise_scale : float
        Standard deviation of the per-frame Gaussian noise.
    smoothing_window : int
        Width of the moving average applied to features (1 disables it).
    imbalance : float
        Ratio of the longest to the shortest mean dwell, kept for reporting.
    """

    ontology: Ontology
    phase_order: Tuple[int, ...]
    skip_probabilities: np.ndarray
    phase_steps: Dict[int, Tuple[int, ...]]
    dwell_means: np.ndarray
    dwell_stds: np.ndarray
    centers: np.ndarray
    noise_scale: float = 0.5
    smoothing_window: int = 5
    fps: float = 1.0
    imbalance: float = 1.0

    def __post_init__(self):
        ontology = self.ontology
        phases, steps = ontology.num_phases, ontology.num_steps
        order = tuple(int(p) for p in self.phase_order)
        if not order or any(not 0 <= p < phases for p in order):
            raise InvalidArgumentError(f"phase order must name phases in [0, {phases})")
        if len(set(order)) != len(order):
            raise InvalidArgumentError("phase order repeats a phase")

        phase_steps = {int(p): tuple(int(s) for s in seq) for p, seq in self.phase_steps.items()}
        for phase in order:
            if not phase_steps.get(phase):
                raise InvalidArgumentError(f"phase {phase} has no steps")
        try:
            ontology = ontology.with_hierarchy({p: frozenset(seq) for p, seq in phase_steps.items()})
        except InvalidArgumentError as exc:
            raise InvalidArgumentError(f"phase steps do not form a valid hierarchy: {exc}") from exc

        skips = np.asarray(self.skip_probabilities, dtype=np.float64)
        means = np.asarray(self.dwell_means, dtype=np.float64)
        stds = np.asarray(self.dwell_stds, dtype=np.float64)
        centers = np.asarray(self.centers, dtype=np.float64)
        if skips.shape != (phases,) or ((skips < 0) | (skips >= 1)).any():
            raise InvalidArgumentError(f"skip probabilities must be {phases} values in [0, 1)")
        if means.shape != (steps,) or (means < 1).any():
            raise InvalidArgumentError(f"dwell means must be {steps} values >= 1")
        if stds.shape != (steps,) or (stds < 0).any():
            raise InvalidArgumentError(f"dwell standard deviations must be {steps} values >= 0")
        if centers.ndim != 2 or centers.shape[0] != steps or centers.shape[1] < 1 or not np.isfinite(centers).all():
            raise InvalidArgumentError(f"centers must be a finite {steps} x D matrix, got {centers.shape}")
        if not self.noise_scale >= 0:
            raise InvalidArgumentError(f"noise scale must be >= 0, got {self.noise_scale}")
        if int(self.smoothing_window) < 1:
            raise InvalidArgumentError(f"smoothing window must be >= 1, got {self.smoothing_window}")
        if not self.fps > 0:
            raise InvalidArgumentError("fps must be positive")

        for name, value in (("ontology", ontology), ("phase_order", order), ("phase_steps", phase_steps),
                            ("skip_probabilities", skips), ("dwell_means", means), ("dwell_stds", stds),
                            ("centers", centers), ("smoothing_window", int(self.smoothing_window))):
            object.__setattr__(self, name, value)

    @property
    def feature_dim(self) -> int:
        return self.centers.shape[1]

    def summary(self):
        """JSON-ready description (centers omitted)."""
        return {
            "feature_dim": self.feature_dim,
            "phase_order": list(self.phase_order),
            "phase_steps": {str(p): list(s) for p, s in sorted(self.phase_steps.items())},
            "skip_probabilities": self.skip_probabilities.tolist(),
            "dwell_means": self.dwell_means.tolist(),
            "dwell_stds": self.dwell_stds.tolist(),
            "noise_scale": float(self.noise_scale),
            "smoothing_window": self.smoothing_window,
            "fps": self.fps,
            "imbalance": float(self.imbalance),
        }


def _prefix_ontology(ontology: Ontology, num_phases: int, num_steps: int) -> Ontology:
    if num_phases > ontology.num_phases or num_steps > ontology.num_steps:
        raise InvalidArgumentError("cannot enlarge an ontology")
    return Ontology(ontology.phases[:num_phases], ontology.steps[:num_steps])


def _block_hierarchy(num_phases: int, num_steps: int, share_null: bool) -> Dict[int, Tuple[int, ...]]:
    """Non-null steps split into contiguous per-phase blocks.

    With ``share_null`` every phase opens with the null step, so the null step
    alone does not reveal the phase. Otherwise the null step belongs to the
    first phase only.
    """
    if num_steps - 1 < num_phases:
        raise InvalidArgumentError(f"{num_steps} steps cannot give each of {num_phases} phases its own step")
    blocks = np.array_split(np.arange(1, num_steps), num_phases)
    hierarchy = {}
    for phase, block in enumerate(blocks):
        lead = (NULL_STEP,) if share_null or phase == 0 else ()
        hierarchy[phase] = lead + tuple(int(s) for s in block)
    return hierarchy


def _geometric_dwells(rng, num_steps: int, base_dwell: float, imbalance: float) -> np.ndarray:
    """Mean dwells from ``base_dwell`` down to ``base_dwell / imbalance`` in seeded rank order."""
    if imbalance < 1:
        raise InvalidArgumentError(f"imbalance must be >= 1, got {imbalance}")
    ranks = rng.permutation(num_steps)
    exponent = ranks / max(num_steps - 1, 1)
    return np.maximum(1.0, base_dwell * imbalance ** -exponent)


def default_synthetic_spec(ontology: Optional[Ontology] = None, feature_dim: int = 64, seed: int = 0,
                           base_dwell: float = 30.0, dwell_spread: float = 0.3, imbalance: float = 8.0,
                           noise_scale: float = 0.5, smoothing_window: int = 5, skip_probability: float = 0.1,
                           fps: float = 1.0) -> SyntheticSpec:
    """Left-to-right workflow over ``ontology`` with a shared null step and imbalanced dwells.

    The first and last phases are never skipped.
    """
    ontology = ontology or default_ontology()
    if feature_dim < 1:
        raise InvalidArgumentError(f"feature_dim must be >= 1, got {feature_dim}")
    rng = np.random.default_rng(seed)
    phases, steps = ontology.num_phases, ontology.num_steps
    skips = np.full(phases, float(skip_probability))
    skips[0] = skips[-1] = 0.0
    means = _geometric_dwells(rng, steps, base_dwell, imbalance)
    return SyntheticSpec(
        ontology=ontology,
        phase_order=tuple(range(phases)),
        skip_probabilities=skips,
        phase_steps=_block_hierarchy(phases, steps, share_null=True),
        dwell_means=means,
        dwell_stds=dwell_spread * means,
        centers=rng.standard_normal((steps, feature_dim)),
        noise_scale=noise_scale,
        smoothing_window=smoothing_window,
        fps=fps,
        imbalance=imbalance,
    )


def separable_spec(ontology: Optional[Ontology] = None, feature_dim: int = 64, seed: int = 0,
                   base_dwell: float = 8.0, noise_ratio: float = 0.05) -> SyntheticSpec:
    """Every step owns one phase, nothing is skipped, noise is ``noise_ratio`` of the closest center gap."""
    ontology = ontology or default_ontology()
    rng = np.random.default_rng(seed)
    steps = ontology.num_steps
    centers = rng.standard_normal((steps, feature_dim))
    gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    min_gap = gaps[~np.eye(steps, dtype=bool)].min()
    means = np.full(steps, float(base_dwell))
    return SyntheticSpec(
        ontology=ontology,
        phase_order=tuple(range(ontology.num_phases)),
        skip_probabilities=np.zeros(ontology.num_phases),
        phase_steps=_block_hierarchy(ontology.num_phases, steps, share_null=False),
        dwell_means=means,
        dwell_stds=0.25 * means,
        centers=centers,
        noise_scale=noise_ratio * min_gap,
        smoothing_window=1,
        imbalance=1.0,
    )


def long_range_spec(feature_dim: int = 64, seed: int = 0, num_phases: int = 4, steps_per_phase: int = 2,
                    base_dwell: float = 600.0, noise_scale: float = 1.5) -> SyntheticSpec:
    """Few classes, dwells far beyond 500 frames, and noise that only temporal context can average out."""
    num_steps = 1 + num_phases * steps_per_phase
    ontology = _prefix_ontology(default_ontology(), num_phases, num_steps)
    rng = np.random.default_rng(seed)
    means = np.full(num_steps, float(base_dwell))
    return SyntheticSpec(
        ontology=ontology,
        phase_order=tuple(range(num_phases)),
        skip_probabilities=np.zeros(num_phases),
        phase_steps=_block_hierarchy(num_phases, num_steps, share_null=True),
        dwell_means=means,
        dwell_stds=0.1 * means,
        centers=rng.standard_normal((num_steps, feature_dim)),
        noise_scale=noise_scale,
        smoothing_window=1,
        imbalance=1.0,
    )


def _sample_dwell(rng, mean: float, std: float) -> int:
    if std == 0:
        return max(1, int(round(mean)))
    shape = (mean / std) ** 2
    return max(1, int(round(rng.gamma(shape, std * std / mean))))


def _smooth(features: np.ndarray, window: int) -> np.ndarray:
    if window == 1:
        return features
    left = (window - 1) // 2
    padded = np.pad(features, ((left, window - 1 - left), (0, 0)), mode="edge")
    return sliding_window_view(padded, window, axis=0).mean(axis=-1)


def _generate_video(spec: SyntheticSpec, video_id: str, rng: np.random.Generator) -> FeatureSequence:
    phases = [p for p in spec.phase_order if rng.random() >= spec.skip_probabilities[p]]
    if not phases:
        phases = [spec.phase_order[0]]
    phase_labels, step_labels = [], []
    for phase in phases:
        for step in spec.phase_steps[phase]:
            dwell = _sample_dwell(rng, spec.dwell_means[step], spec.dwell_stds[step])
            phase_labels.extend([phase] * dwell)
            step_labels.extend([step] * dwell)
    steps = np.asarray(step_labels, dtype=np.int64)
    features = spec.centers[steps]
    if spec.noise_scale:
        features = features + spec.noise_scale * rng.standard_normal(features.shape)
    features = _smooth(features, spec.smoothing_window)
    return FeatureSequence(video_id, features.astype(np.float32), np.asarray(phase_labels, dtype=np.int64),
                           steps, spec.fps)


def generate_synthetic(spec: SyntheticSpec, num_videos: int, seed: int) -> Dataset:
    """Generate ``num_videos`` videos; video ``i`` draws from its own child of ``seed``."""
    if num_videos < 1:
        raise InvalidArgumentError(f"num_videos must be >= 1, got {num_videos}")
    children = np.random.SeedSequence(seed).spawn(num_videos)
    sequences = tuple(
        _generate_video(spec, f"video_{index:03d}", np.random.default_rng(child))
        for index, child in enumerate(children)
    )
    frames = sum(s.num_frames for s in sequences)
    logger.info("Generated %d synthetic videos (%d frames, D=%d, seed=%d)", num_videos, frames, spec.feature_dim, seed)
    metadata = {"generator": "synthetic", "seed": seed, "num_videos": num_videos, "spec": spec.summary()}
    return Dataset(spec.ontology, sequences, metadata)
