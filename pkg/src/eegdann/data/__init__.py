from .regions import DEAP_CHANNELS, DEFAULT_REGIONS, RegionMap, default_region_map
from .records import TARGET_RATE, TrialRecord
from .windows import EEGWindow, WindowSet
from .bundle import Bundle, BundleError, load_bundle, save_bundle
from .preprocess import (
    WINDOW_SAMPLES,
    bandpass,
    baseline_subtract,
    binarize_labels,
    downsample,
    preprocess_trial,
    window_segments,
)
from .psd import pearson_matrix, psd_band_power, subject_psd_correlation
from .synth import synth_subjects
