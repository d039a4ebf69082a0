"""Phase-aware instrument timbre classification.

Feature side: multiresolution recurrence-plot stacks that keep waveform phase
structure, plus fixed-geometry log-magnitude spectrogram images. Model side:
a two-column convolutional network merged by summation at the fully-connected
stage, trained with momentum SGD, evaluated by source-level k-fold
cross-validation.
"""

from .audio_io import TimeSeries, decode_wav, encode_wav_float32, require_rate
from .dataset import (
    Example,
    SynthClassSpec,
    SynthConfig,
    acquisition_points,
    assemble_example,
    augment,
    detect_onset,
    harmonic_tone,
    make_folds,
    read_features,
    synth_corpus,
    write_features,
)
from .model import (
    MultiColumnNet,
    NetConfig,
    build_net,
    cross_validate,
    evaluate,
    forward,
    single_column_variant,
    train,
)
from .mrp_features import (
    MrpStack,
    build_mrp_layer,
    build_mrp_stack,
    maxpool_1d,
    maxpool_2d,
    preprocess_image,
    recurrence_plot,
)
from .nn_core import SgdConfig
from .spectrogram_features import dft_magnitudes, spectrogram_image

__version__ = "0.1.0"
