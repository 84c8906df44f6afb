"""ConvLSTM precipitation forecasting for small gridded reanalysis extracts."""
from .convlstm import (
    CellParams,
    CellState,
    NetworkSpec,
    cell_step,
    init_params,
    layer_forward,
    load_checkpoint,
    network_forward,
    save_checkpoint,
)
from .datapipe import (
    GridSeriesDataset,
    NormalizationStats,
    WindowSpec,
    apply_normalization,
    fit_normalization,
    invert,
    load_csv,
    make_windows,
    prepare,
    save_csv,
    split,
)
from .metrics import correlation_matrix, nrmse, nse, pearson_cc, per_grid_report
from .tensor import conv2d_same, hadamard, relu, sigmoid, tanh_act
from .training import TrainConfig, adam_step, backward, grad_check, mse_loss, train

__version__ = "0.1.0"
