"""Planar polygonal patchy vector fields: construction and validation,
Caratheodory and impulsively forced integration, constructive shadowing,
and empirical stability-rate measurement."""

from .errors import (BudgetExceeded, GateSeparationViolated, HorizonExceeded,
                     InvalidBoundaryPoint, JumpExitsDomain, MixedSignEdge,
                     NoBackwardSolution, OutsideDomain, PatchyFlowError,
                     ScenarioFormatError, ScenarioOutOfRange, StallDetected,
                     TubeAmbiguity, TubeContradiction)
from .field import (Patch, PatchyField, SmoothFieldSpec, ValidationReport,
                    validate_all, validate_inward, validate_nonzero,
                    validate_transversal)
from .geometry import (ClipMode, OrientedLine, PointClass, Polygon,
                       PolygonalRegion, classify_point, clip_segment,
                       signed_distance, tangent_cone_interior_contains)
from .integrate import (Direction, SolverOptions, Trajectory,
                        VertexTrajectory, boundary_classification,
                        boundary_time_measure, classical_residual, exit_time,
                        is_alpha_monotone, solve_backward, solve_forward,
                        solve_perturbed, sup_distance, vertex_trajectories,
                        write_trajectory_csv)
from .perturbation import (BVPath, InnerOuterPerturbation, Jump,
                           from_inner_outer, total_variation)
from .rates import (Example14Scenario, RateTable, example_1_4_distance,
                    example_1_4_sweep, fit_loglog, lipschitz_bound_check,
                    rate_sweep)
from .scenario import Scenario, load_scenario, parse_scenario
from .shadow import (CCS, GlueResult, OracleGrid, OracleResult, ReplaceResult,
                     ShadowResult, StageLog, build_ccs, glue_single_jump,
                     monotonize, nearest_solution_oracle, replace_in_domain,
                     shadow, to_piecewise)
from .tubes import (FittedConstants, Tube, build_tubes, calibrate,
                    gate_points, pair_separation, region_separation,
                    tubes_disjoint)

__version__ = "0.1.0"
