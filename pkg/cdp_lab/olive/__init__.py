from cdp_lab.olive.estimators import (
    estimate_all_errors,
    estimate_initial_values,
    estimate_self_errors,
    make_estimator,
)
from cdp_lab.olive.loop import (
    IterationRecord,
    OliveResult,
    OliveRunner,
    check_termination,
    choose_optimistic,
    eliminate,
    run_guess_m,
    run_olive,
    run_oliver,
)
from cdp_lab.olive.parameters import (
    OliveConfig,
    OliveParameters,
    compute_parameters,
    epsilon_prime,
    iteration_bound,
    level_iteration_bound,
)
