"""Joint identification of unknown dynamics (linear operator on learned
observables) and recovery of objective weights from optimal trajectory
segments."""

__version__ = "0.1.0"

from ._kernels import BACKEND, NUMBA_AVAILABLE
from .demos import (
    FeatureSpec,
    OcConfig,
    OcSolution,
    OcSolverError,
    eval_objective,
    pendulum_feature_spec,
    pendulum_features,
    pmp_residual,
    solve_oc,
)
from .dynamics import (
    Dataset,
    PendulumParams,
    Segment,
    SystemSpec,
    Trajectory,
    linear_system,
    pendulum_step,
    pendulum_system,
    simulate,
    slice_segments,
)
from .harness import (
    ExperimentConfig,
    RunResult,
    TableResult,
    generate_demo,
    make_dataset,
    run_algorithm1,
    run_iterative,
    run_table1,
    run_table2,
    traj_error,
    train_dkr,
)
from .ioc import (
    PmpSystem,
    WeightEstimate,
    assemble_pmp,
    solve_weights,
    stack_segments,
    weight_error,
)
from .koopman import (
    DataMatrices,
    KoopmanModel,
    TrainConfig,
    build_matrices,
    dkr_max_recon_error,
    fit_model,
    loss_C,
    loss_K,
    solve_C,
    solve_K,
    train_theta,
    update_C,
    update_K,
)
from .observables import (
    MlpConfig,
    MlpObservable,
    ObservableFn,
    empirical_lipschitz,
    identity_observable,
    mlp_observable,
)
