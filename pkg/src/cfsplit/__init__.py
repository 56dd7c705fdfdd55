"""Coordinate-friendly operator splitting: fixed-point operators, coordinate
updates with maintained quantities, and sequential / parallel drivers."""
from .core import (CF, BlockPartition, BlockVector, CacheInvalidError, ComposedOperator,
                   DiagonalOperator, DimensionError, FixedPointOperator, IdentityOperator,
                   InvalidPartitionError, LinearGradientOperator, MaintainedCache, MatrixOperator,
                   OpCounter, OperatorDescriptor, Sep, apply_coordinate, apply_full, cache_audit,
                   classify_composition, commit, make_linear_gradient, make_partition,
                   measure_costs, uniform_partition)
from .execution import (AsyncConfig, DivergenceError, IndexRule, RunResult, Stop, Trace,
                        eta_max_bound, fixed_point_residual, next_index, run_async_parallel,
                        run_sequential, run_sync_parallel)
from .primal_dual import (CondatVuOperator, EMPOperator, OverlapOperator, OverlapWeights,
                          PrimalDualProblem, PrimalDualState, cv_coord_update, cv_step,
                          cv_swapped_coord_update, cv_swapped_step, emp_step, overlap_block_update,
                          validate_metric)

__version__ = "0.1.0"
