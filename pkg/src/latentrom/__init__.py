"""Reduced-order modeling of parameterized PDEs via latent ODE identification.

Pipeline: compress snapshot trajectories to a low-dimensional latent space
(autoencoder or POD), identify per-parameter latent ODEs by strong- or
weak-form regression on a candidate-term library, interpolate the ODE
coefficients across parameter space (RBF / k-NN / Gaussian process), and
predict full-order solutions at new parameters by integrating and decoding.
Greedy data acquisition (PDE-residual- or variance-driven) grows the training
set where the surrogate is worst.
"""

from .data_model import (
    ParameterGrid,
    ParameterPoint,
    SnapshotSet,
    Trajectory,
    append_snapshot,
    load_snapshots,
    make_parameter_grid,
    parameter_grid_csv,
    save_snapshots,
)
from .errors import ConfigError, FormatError, NumericalError
from .fom_burgers import (
    BurgersConfig,
    BurgersFom,
    burgers_initial_condition,
    burgers_residual,
    burgers_solve,
    residual_sample_indices,
    solve_grid,
    time_averaged_residual,
)
from .greedy_training import (
    LossWeights,
    TrainConfig,
    TrainLog,
    select_next_residual,
    select_next_variance,
    total_loss,
    train,
)
from .interpolation import (
    GpModel,
    KnnModel,
    RbfModel,
    fit_interpolator,
    gp_fit,
    gp_predict,
    gp_sample,
    interpolate,
    knn_eval,
    knn_fit,
    rbf_eval,
    rbf_fit,
)
from .latent_dynamics import (
    LibrarySpec,
    TestFunctionBank,
    build_library,
    build_test_functions,
    coefficients_csv,
    finite_difference_dz,
    sindy_loss,
    strong_fit,
    weak_fit,
    weak_sindy_loss,
    weak_system,
)
from .projection import (
    AdamState,
    MlpParams,
    PodBasis,
    adam_init,
    adam_step,
    decode,
    decoder_velocity,
    encode,
    latent_velocity,
    loss_gradients,
    mlp_init,
    pod_decode,
    pod_encode,
    pod_fit,
    reconstruction_loss,
    velocity_loss,
)
from .rom import (
    RomModel,
    RomPrediction,
    integrate_latent,
    load_model_path,
    max_relative_error,
    predict,
    predict_with_uncertainty,
    save_model_path,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
