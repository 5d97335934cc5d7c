"""qpkam: invariant curves of planar mappings quasi-periodic in the angle.

Spectral construction of the conjugacy to a rigid rotation: Diophantine
certification, analytic smoothing of C^p map data, small-divisor difference
equations, and the iterative invariant-curve driver, with the proved
inequalities available as runnable checks.
"""

from .cohomology import CohomologySolution, epsilon_of, solve_coupled, solve_single
from .diophantine import (
    DivisorTable,
    RejectionReport,
    RotationNumber,
    certify_frequency,
    certify_rotation,
    divisor_sum_bound_check,
    sample_admissible,
)
from .errors import QpKamError
from .kam import (
    ConjugacyMap,
    InvariantCurve,
    KamSchedule,
    NormalizedMap,
    build_schedule,
    inductive_step,
    intersection_bound,
    normalize,
    run,
    smallness_check,
    solve_back,
)
from .maps import (
    CurveGraph,
    QpPlanarMap,
    exactness_defect,
    image_curve,
    intersection_witness,
    kicked_twist,
    model_from_config,
    pure_twist,
    rigid_shift,
)
from .qpfourier import (
    Frequency,
    ShellFunction,
    StripDomain,
    StripFunction,
    compose_angle,
    eval_shell,
    invert_angle_map,
    mean_value,
)
from .smoothing import SampledCpFunction, SmoothingFamily, build_family, smooth

__version__ = "0.1.0"

__all__ = [
    "CohomologySolution", "ConjugacyMap", "CurveGraph", "DivisorTable",
    "Frequency", "InvariantCurve", "KamSchedule", "NormalizedMap",
    "QpKamError", "QpPlanarMap", "RejectionReport", "RotationNumber",
    "SampledCpFunction", "ShellFunction", "SmoothingFamily", "StripDomain",
    "StripFunction", "build_family", "build_schedule", "certify_frequency",
    "certify_rotation", "compose_angle", "divisor_sum_bound_check",
    "epsilon_of", "eval_shell", "exactness_defect", "image_curve",
    "inductive_step", "intersection_bound", "intersection_witness",
    "invert_angle_map", "kicked_twist", "mean_value", "model_from_config",
    "normalize", "pure_twist", "rigid_shift", "run", "sample_admissible",
    "smallness_check", "smooth", "solve_back", "solve_coupled", "solve_single",
]
