"""specfair: a desk-scale laboratory for speculative decoding fairness.

Exact categorical arithmetic, tabular softmax toy models, a lossless
draft/verify/resample sampler with a brute-force oracle, task-level
acceptance/divergence/speed-up accounting with certified bound validators,
and a fairness-weighted drafter fine-tuning loop with baselines.
"""

from .dist import (EPSILON_FLOOR, DegenerateResidualError, InvalidTemperatureError,
                   VocabularyMismatchError, acceptance_overlap, categorical,
                   cross_entropy, entropy, kl_divergence, residual,
                   temperature_scale, total_variation)
from .engine import (EnumerationTooLargeError, SpecConfig, StepTrace,
                     enumerate_step_distribution, expected_tokens, speculative_step,
                     speedup, vanilla_decode)
from .config import (ConfigError, ExperimentConfig, RunManifest, build_family,
                     config_from_dict, config_hash, load_config, write_manifest)
from .fairness import (METRICS_HEADER, ChainReport, DisparityReport, FitnessReport,
                       RepresentationEstimate, Task, TaskFamily, TaskMetrics,
                       certified_envelope, estimate_representation, family_metrics,
                       metrics_csv_rows, sampled_task_metrics, task_metrics,
                       unfairness, validate_chain, validate_disparity_condition,
                       validate_fitness_bound, write_metrics_csv)
from .family import (FamilySpec, InfeasibleFamilyError, SyntheticFamily, TaskSpec,
                     make_synthetic_family, token_range_classifier)
from .mitigation import (TRAINLOG_HEADER, BalanceResult, DivergenceAbort,
                         ScdfHistory, ScdfStepRecord, SweepRow, TrainerConfig,
                         TrainLogRow, acceptance_proxy, data_balance_finetune,
                         estimate_task_ce, fairness_weighted_direction, run_scdf,
                         temperature_sweep)
from .models import PAD_TOKEN, TabularSoftmaxModel, context_key
from .rng import sample_index, substream

__version__ = "0.1.0"
