"""Derandomized conformal novelty detection with e-values."""
__version__ = "0.1.0"

from .calibrators import Calibrator, CalibratorKind, SoftRankParams, p_to_e, soft_rank_evalue, soft_rank_evalues
from .conformal_core import (
    INF_THRESHOLD,
    EValueMatrix,
    FDPVariant,
    ScoreSet,
    aggregate_evalues,
    bh_threshold,
    break_ties,
    conformal_pvalues,
    evalues_at_threshold,
    fdp_estimate,
)
from .data_synth import Dataset, Subsample, SyntheticConfig, generate_synthetic, load_dataset, save_dataset, split_reference
from .harness import (
    PipelineConfig,
    PipelineMethod,
    RunReport,
    evaluate,
    run_analysis,
    run_baseline_evalues,
    run_derandomized,
    run_experiment,
    run_from_scores,
    run_randomized,
)
from .multiple_testing import RejectionSet, bh_filter, ebh_filter
from .scoring import ScorerKind, TrainSpec, ingest_scores, score_batch, train_binary, train_one_class
from .weighting import (
    WeightingScheme,
    WeightKind,
    WeightVector,
    normalize,
    trimmed_mean_weight,
    ttest_weight,
    uniform_weight,
)
