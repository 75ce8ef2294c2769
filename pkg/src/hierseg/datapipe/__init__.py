from .batching import PRESETS, BatchSampler, BatchSpec, Sample, prefetch, prepare_sample, stack_images
from .dataset import (MODES, PER_PIXEL, Dataset, SampleRecord, generate_records, load_dataset,
                      read_annotations, synth_generate, write_dataset)
from .geometry import fit_and_crop, fit_scale, resize_bilinear, resize_nearest
from .synth import SceneSampler

__all__ = [
    "PRESETS", "BatchSampler", "BatchSpec", "Sample", "prefetch", "prepare_sample", "stack_images",
    "MODES", "PER_PIXEL", "Dataset", "SampleRecord", "generate_records", "load_dataset",
    "read_annotations", "synth_generate", "write_dataset",
    "fit_and_crop", "fit_scale", "resize_bilinear", "resize_nearest", "SceneSampler",
]
