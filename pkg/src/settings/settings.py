"""Load and save run configuration settings."""

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from ..logger import get_logger

logger = get_logger(__name__)

# Path to the settings file located alongside this module
SETTINGS_FILE = os.path.join(os.path.dirname(__file__), 'settings.json')

# Default settings used if no settings file is found
DEFAULT_SETTINGS = {
    'profile': 'desk',  # Named preset applied on top of these defaults (desk or full)
    'seed': 0,  # Seed for data generation, fold shuffling, initialization and dropout
    'dataset_path': os.path.join('data', 'synthetic'),  # Dataset directory with manifest.json
    'ontology_path': None,  # Ontology JSON; None means the one referenced by the manifest
    'output_directory': 'output',  # Directory where run artifacts are written
    'num_videos': 8,  # Videos produced by the synthetic generator
    'feature_dim': 64,  # Per-frame feature size D
    'fps': 1.0,  # Frame rate recorded in generated sequences
    'noise_scale': 0.5,  # Std of Gaussian feature noise in generated sequences
    'smoothing_window': 5,  # Moving-average window applied to generated features
    'subsample_stride': 1,  # Keep every n-th frame when loading a dataset
    'num_stages': 2,  # TCN refinement stages
    'layers_per_stage': 10,  # Dilated residual layers per stage
    'filters': 64,  # TCN channel width
    'kernel': 3,  # Dilated convolution kernel width
    'dropout': 0.5,  # Dropout rate inside residual layers
    'lstm_hidden': 64,  # Hidden units of the LSTM baseline
    'framewise_hidden': 256,  # Hidden units of the frame-wise baseline
    'epochs': 20,  # Training epochs for temporal models
    'lr': 3e-4,  # Learning rate for temporal models
    'framewise_epochs': 30,  # Training epochs for the frame-wise baseline
    'framewise_lr': 1e-5,  # Learning rate for the frame-wise baseline
    'framewise_weight_decay': 5e-5,  # L2 weight regularization for the frame-wise baseline
    'selection_metric': 'mean_acc',  # Validation metric used to pick the checkpoint
    'folds': 4,  # Cross-validation folds
    'val_count': 1,  # Validation videos per fold
    'models': ['framewise', 'mt-framewise', 'lstm', 'mt-lstm', 'tcn', 'mtms-tcn'],  # Variants for crossval
    'workers': 1,  # Folds trained in parallel threads
}

# Presets: desk-scale smoke runs and the full-scale configuration
PROFILES = {
    'desk': {
        'framewise_epochs': 10,
        'framewise_lr': 1e-3,
    },
    'full': {
        'num_videos': 40,
        'feature_dim': 2048,
        'epochs': 200,
        'framewise_epochs': 30,
        'framewise_lr': 1e-5,
        'val_count': 6,
    },
}


def load_settings(path=None, profile=None, overrides=None):
    """
    Loads settings with precedence defaults < profile < settings file < overrides.

    ``path`` defaults to :data:`SETTINGS_FILE`; a missing or unreadable file
    leaves the defaults (and profile) in place.
    """
    path = path or SETTINGS_FILE
    file_settings = {}
    if os.path.exists(path):  # Check if the settings file exists
        try:
            with open(path, 'r', encoding='utf-8') as f:
                file_settings = json.load(f)
        except (json.JSONDecodeError, OSError) as e:
            logger.error("Error reading settings file %s: %s. Using default settings.", path, e)
            file_settings = {}

    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    chosen = overrides.get('profile') or profile or file_settings.get('profile') or DEFAULT_SETTINGS['profile']
    if chosen not in PROFILES:
        raise ValueError(f"Unknown profile '{chosen}'; expected one of {sorted(PROFILES)}")

    merged = DEFAULT_SETTINGS.copy()
    merged.update(PROFILES[chosen])
    merged.update(file_settings)
    merged.update(overrides)
    merged['profile'] = chosen
    return merged

def save_settings(settings, path=None):
    """
    Saves the provided settings to the settings file.
    """
    path = path or SETTINGS_FILE
    try:
        # Use a temporary file to ensure atomic writes
        settings_dir = os.path.dirname(os.path.abspath(path))
        os.makedirs(settings_dir, exist_ok=True)
        with tempfile.NamedTemporaryFile('w', delete=False, dir=settings_dir, encoding='utf-8') as tmp_file:
            json.dump(settings, tmp_file, indent=4, sort_keys=True)
            temp_file_name = tmp_file.name
        os.replace(temp_file_name, path)
    except (OSError, IOError) as e:
        logger.error("Error saving settings to file: %s", e)
    except TypeError as e:
        logger.error("Error serializing settings: %s", e)


@dataclass(frozen=True)
class RunConfig:
    """Typed view of a merged settings dictionary for one reproducible run."""

    dataset_path: str
    ontology_path: Optional[str]
    output_directory: str
    seed: int
    folds: int
    val_count: int
    models: Tuple[str, ...]
    workers: int
    model: Dict[str, Any] = field(default_factory=dict)
    training: Dict[str, Any] = field(default_factory=dict)
    synthetic: Dict[str, Any] = field(default_factory=dict)
    settings: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_settings(cls, settings):
        """Build a :class:`RunConfig` from a dictionary returned by :func:`load_settings`."""
        return cls(
            dataset_path=settings['dataset_path'],
            ontology_path=settings.get('ontology_path'),
            output_directory=settings['output_directory'],
            seed=int(settings['seed']),
            folds=int(settings['folds']),
            val_count=int(settings['val_count']),
            models=tuple(settings['models']),
            workers=int(settings['workers']),
            model={
                'input_dim': int(settings['feature_dim']),
                'num_stages': int(settings['num_stages']),
                'layers_per_stage': int(settings['layers_per_stage']),
                'filters': int(settings['filters']),
                'kernel': int(settings['kernel']),
                'dropout': float(settings['dropout']),
                'lstm_hidden': int(settings['lstm_hidden']),
                'framewise_hidden': int(settings['framewise_hidden']),
            },
            training={
                'epochs': int(settings['epochs']),
                'lr': float(settings['lr']),
                'seed': int(settings['seed']),
                'selection_metric': settings['selection_metric'],
                'framewise_lr': float(settings['framewise_lr']),
                'framewise_epochs': int(settings['framewise_epochs']),
                'framewise_weight_decay': float(settings['framewise_weight_decay']),
            },
            synthetic={
                'feature_dim': int(settings['feature_dim']),
                'fps': float(settings['fps']),
                'noise_scale': float(settings['noise_scale']),
                'smoothing_window': int(settings['smoothing_window']),
            },
            settings=dict(settings),
        )

    def require_paths(self, dataset=True):
        """Raise :class:`FileNotFoundError` for referenced paths that do not exist."""
        required = []
        if dataset:
            required.append(self.dataset_path)
        if self.ontology_path:
            required.append(self.ontology_path)
        for path in required:
            if not os.path.exists(path):
                raise FileNotFoundError(f"Referenced path does not exist: {path}")
