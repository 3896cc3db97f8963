"""Stochastic Armijo backtracking line search with adaptive sample sizing,
plus the diagnostics and experiment harness for its expected-complexity
behavior."""

from .linesearch import (
    DescentDirection,
    DirectionMode,
    IterateState,
    LineSearchConfig,
    Outcome,
    StepRecord,
    StreamFactory,
    Trace,
    armijo_test,
    reliability_test,
    run,
    scaled_newton_provider,
    steepest_provider,
    step,
    trace_to_csv,
)
from .oracle import (
    Convexity,
    Problem,
    ProblemMetadata,
    SampleBatch,
    draw_batch,
    exact_gradient,
    exact_value,
    make_builtin,
    make_gaussian_probe,
    sample_gradient,
    sample_value,
)
from .potential import (
    PotentialConfig,
    StoppingSpec,
    annotate_trace,
    auto_nu,
    classify_events,
    expected_stop_bounds,
    phi,
    psi_convex,
    psi_strongly_convex,
    theoretical_constants,
)
from .sampling import (
    AccuracyConfig,
    FunctionEstimatePair,
    GradientEstimate,
    estimate_function_pair,
    estimate_gradient,
    function_sample_size,
    gradient_sample_size,
)

__version__ = "0.1.0"
