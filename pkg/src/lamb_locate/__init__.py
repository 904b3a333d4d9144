"""Impact localization on plates from raw sensor time series with a
per-step GRU estimator, trained on synthetic plate-wave data."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    CoverageError,
    DataError,
    DimensionError,
    FormatError,
    InsufficientDataError,
    LambLocateError,
    NoOnsetError,
    NumericError,
)
from .plate import (  # noqa: F401
    ImpactEvent,
    NoiseConfig,
    PlateConfig,
    SensorArray,
    WaveletConfig,
    arrival_time,
    generate_dataset,
    image_sources,
    sample_impact_positions,
    synth_recording,
)
from .recording import Recording, read_signal, write_signal  # noqa: F401
from .pipeline import (  # noqa: F401
    Dataset,
    PipelineConfig,
    SampleWindow,
    SplitSpec,
    crop_window,
    detect_onset,
    downsample,
    load_window_batch,
    select_sensors,
    split_dataset,
)
from .gru import (  # noqa: F401
    ModelParams,
    PredictionTrace,
    forward_trace,
    gru_step,
    init_params,
    input_projection,
    load_checkpoint,
    readout,
    save_checkpoint,
)
from .train import (  # noqa: F401
    OptimizerState,
    TrainConfig,
    TrainHistory,
    adamw_step,
    backward,
    batch_loss,
    lr_schedule,
    sequence_loss,
    train,
)
from .evaluate import ErrorSummary, SweepGrid, evaluate, position_error, sweep  # noqa: F401
from .baseline import toa_triangulate  # noqa: F401
from .report import emit_report  # noqa: F401
