from .clips import AugmentConfig, Clip, augment, mixup, sample_clip
from .manifest import DatasetManifest, ManifestError, load_manifest, save_manifest
from .synthetic import SyntheticConfig, generate_synthetic

__all__ = ["AugmentConfig", "Clip", "augment", "mixup", "sample_clip", "DatasetManifest", "ManifestError",
           "load_manifest", "save_manifest", "SyntheticConfig", "generate_synthetic"]
