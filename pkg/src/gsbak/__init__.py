"""Query-budgeted black-box attacks on top-K classifier rankings.

Two attack families built on desk-scale oracles: a two-phase boundary
attack that estimates gradients from probe batches and walks the decision
boundary toward the benign point, and a ball-constrained random-search
baseline. The harness runs seeded grids of both and reduces the traces to
success-rate and distortion tables.
"""

from .attack import (AttackConfig, AttackTrace, InitStalled, TraceEntry, attack,
                     default_epsilon, find_initial_boundary)
from .estimators import (AllZeroWeights, EmptyBatch, InvalidVariant,
                         LogitsUnavailable, ProbeBatch, boundary_gradient,
                         boundary_probe_weights, collect_probe_batch,
                         init_gradient, init_probe_weights, probe_schedule)
from .geometry import (DegeneratePlane, InvalidBracket, SemicirclePlane,
                       ZeroVector, boundary_binary_search, semicircle_point,
                       semicircular_boundary_search, unit_direction)
from .goldens import verify_goldens
from .harness import (ConfigError, ExperimentConfig, LedgerMismatch, ResultRow,
                      asr, median_l2, preset_config, read_rows, row_seed,
                      run_experiment, select_target_set, splitmix64, summarize,
                      write_rows, write_summary)
from .models import (DimensionMismatch, FixtureMissing, GenerationFailed,
                     LinearSoftmaxModel, MlpModel, RbfSoftmaxModel,
                     TiedActiveSet, analytic_margin_gradient,
                     generate_synthetic_task, load_model, predict_probs,
                     save_model)
from .noise import NoiseConfig, NoiseSampler, ShapeError, dct2, idct2
from .oracle import (TARGETED, UNTARGETED, AttackGoal, BudgetExhausted,
                     CountingModel, InsufficientClasses, QueryLedger,
                     confidence_delta_w, is_adversarial, margin_f, query_probs,
                     top_k, validate_probs)
from .square import p_selection, sak_loss, square_attack

__version__ = "1.0.0"
