"""Feature-augmented transformer classifiers for sentence-level
subjectivity detection, with a sequential cross-lingual fine-tuning and
experiment harness."""

from .corpus import ClassLabel, Dataset, LabeledSentence, class_counts, load_dataset
from .evaluate import EvalReport, macro_f1, predict
from .lexical import TfidfConfig, TfidfModel, fit_vectorizer
from .model import SubjectivityClassifier, build_model
from .orchestrate import (
    AblationVariant,
    LanguageData,
    SequencePlan,
    run_ablation,
    run_order_study,
    train_sequence,
)
from .train import PRESETS, RunRecord, TrainConfig, train_model

__version__ = "0.1.0"

__all__ = [
    "AblationVariant",
    "ClassLabel",
    "Dataset",
    "EvalReport",
    "LabeledSentence",
    "LanguageData",
    "PRESETS",
    "RunRecord",
    "SequencePlan",
    "SubjectivityClassifier",
    "TfidfConfig",
    "TfidfModel",
    "TrainConfig",
    "build_model",
    "class_counts",
    "fit_vectorizer",
    "load_dataset",
    "macro_f1",
    "predict",
    "run_ablation",
    "run_order_study",
    "train_model",
    "train_sequence",
]
