"""Propositionalization of relational databases by static (RELAGGS) or trainable nested aggregation."""

__version__ = "0.1.0"

from .errors import NRelaggsError
from .evaluation import (
    CVSplit,
    EvalReport,
    Protocol,
    accuracy,
    auroc,
    grid_search,
    run_benchmark,
    stratified_kfold,
)
from .model import (
    AggregationLayer,
    NRelaggsConfig,
    NRelaggsModel,
    build_model,
    extract_features,
    forward,
    forward_dense_oracle,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .preprocess import (
    AggregationPlan,
    BatchBundle,
    InstanceBundle,
    PreprocessorState,
    build_instance,
    build_instances,
    collate,
    encode_row,
    fit_preprocessor,
    generate_aggregation_plan,
    read_bundle,
    write_bundle,
)
from .relaggs import relaggs_propositionalize, relaggs_width
from .schema import (
    ColumnSpec,
    RelationalDatabase,
    TableSpec,
    class_distribution,
    join_children,
    load_database,
)
