"""Benchmarking toolkit for unsupervised domain adaptation on time series."""

from .algorithms import (
    AlgorithmSpec,
    CandidateModel,
    HParams,
    TrainConfig,
    adapt,
    list_algorithms,
    source_classification_loss,
)
from .backbones import BackboneSpec, build_backbone, forward
from .data import (
    DomainStyle,
    LabelAudit,
    Scenario,
    ShiftSpec,
    TimeSeriesDataset,
    load_dataset,
    make_synthetic,
    normalize,
    prepare_scenario,
    save_dataset,
    segment,
    stratified_split,
)
from .metrics import accuracy, domain_gap, macro_f1
from .selection import dev_risk, fst_risk, select_best, src_risk, tgt_risk
from .sweep import SweepPlan, aggregate, run_sweep, sample_hparams

__version__ = "0.1.0"
