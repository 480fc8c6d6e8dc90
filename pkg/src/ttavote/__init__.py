"""Test-time augmentation ensembles with consensus voting for document
transcription, plus evaluation, calibration, and selection tooling."""

__version__ = "0.1.0"

from .augment import AugmentationGrid, AugmentationSpec, Category, apply_augmentation, build_grid
from .consensus import (
    Alignment,
    CaseMode,
    ConsensusResult,
    SampleSet,
    field_confidence,
    nw_align,
    progressive_consensus,
    word_confidences,
)
from .core import (
    FIELD_NAMES,
    Dataset,
    DatasetRecord,
    DocumentImage,
    FieldSet,
    generate_synthetic_dataset,
    load_dataset,
    normalize_text,
    save_dataset,
)
from .metrics import (
    CalibrationMap,
    EvalOutcome,
    ace,
    brier,
    cer,
    ece,
    error_correlation,
    evaluate_field,
    field_accuracy,
    isotonic_fit,
    levenshtein,
    unanimous_precision_recall,
)
from .selection import (
    CandidatePool,
    FoldPlan,
    build_simulated_pool,
    kfold_split,
    run_cv_experiment,
    select_greedy_consensus,
    select_oracle,
    select_top_individual,
)
from .theory import (
    MajoritySimResult,
    VoteModel,
    analytic_variance,
    effective_sample_size,
    simulate_majority_error,
)
from .transcriber import (
    GenerationParams,
    NoiseModel,
    RemoteTranscriber,
    RunRecord,
    TranscriptionCache,
    simulate_transcribe,
)

__all__ = [
    "AugmentationGrid",
    "AugmentationSpec",
    "Alignment",
    "CalibrationMap",
    "CandidatePool",
    "CaseMode",
    "Category",
    "ConsensusResult",
    "Dataset",
    "DatasetRecord",
    "DocumentImage",
    "EvalOutcome",
    "FIELD_NAMES",
    "FieldSet",
    "FoldPlan",
    "GenerationParams",
    "MajoritySimResult",
    "NoiseModel",
    "RemoteTranscriber",
    "RunRecord",
    "SampleSet",
    "TranscriptionCache",
    "VoteModel",
    "ace",
    "analytic_variance",
    "apply_augmentation",
    "brier",
    "build_grid",
    "build_simulated_pool",
    "cer",
    "ece",
    "effective_sample_size",
    "error_correlation",
    "evaluate_field",
    "field_accuracy",
    "field_confidence",
    "generate_synthetic_dataset",
    "isotonic_fit",
    "kfold_split",
    "levenshtein",
    "load_dataset",
    "normalize_text",
    "nw_align",
    "progressive_consensus",
    "run_cv_experiment",
    "save_dataset",
    "select_greedy_consensus",
    "select_oracle",
    "select_top_individual",
    "simulate_majority_error",
    "simulate_transcribe",
    "unanimous_precision_recall",
    "word_confidences",
]
