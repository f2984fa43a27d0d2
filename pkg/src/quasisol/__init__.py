"""quasisol: constrained (quasi-solution), residual-method and penalized
regularization of ill-posed inverse problems, with discrepancy-type radius
rules and elliptic-PDE parameter-identification experiments."""

from .errors import (
    ConfigError,
    DomainError,
    InfeasibleError,
    QuasisolError,
    SolveFailure,
)
from .forward import (
    BoxConstraint,
    Diffusion1DProblem,
    ForwardProblem,
    Kernel,
    KernelProblem,
    PotentialProblem,
    SourceProblem,
    kernel_optimality_p,
    problem_from_config,
)
from .grids import (
    Grid,
    GridFunction,
    SparseOperator,
    build_laplacian,
    function_from_spec,
    h_minus1_norm,
    lp_norm,
    solve_spd,
)
from .param_choice import (
    RhoRule,
    RhoSelection,
    Theorem1Report,
    choose_rho,
    rule_from_config,
    verify_theorem1_relations,
)
from .regularizers import (
    BVIncrements1D,
    L2Shifted,
    Regularizer,
    SubgradientElement,
    SupShifted,
    bregman,
    project_l1_ball,
    regularizer_from_config,
)
from .solvers import (
    MisfitS,
    RegSolution,
    SolverOptions,
    ivanov_solve,
    morozov_solve,
    scalar_oracle,
    tikhonov_solve,
)
from .experiments import (
    CounterexampleReport,
    NoiseModel,
    RateReport,
    RateStudy,
    emit_results,
    make_noisy,
    run_counterexample,
    run_rate_study,
    verify_rate_bound,
)

__version__ = "0.1.0"
