"""Static nested aggregation baseline.

Child rows are replaced, per parent row, by five fixed statistics
(average, maximum, minimum, population standard deviation, sum) and appended
to the parent. Blocks are laid out like the trainable network: the aggregates
of each child table in plan order, then the parent's own encoded columns.
"""

from __future__ import annotations

import numpy as np

from .errors import PlanMismatch
from .neural import SegmentIndex, segment_aggregate
from .preprocess import AggregationPlan, BatchBundle

STATIC_AGGREGATES = ("mean", "max", "min", "std", "sum")


def static_aggregate(X: np.ndarray, seg: SegmentIndex) -> np.ndarray:
    """[average | max | min | std | sum] per segment; empty segments give zeros."""
    mean = segment_aggregate(X, seg, "mean")
    centered = X - mean[seg.ids]
    var = segment_aggregate(centered * centered, seg, "mean")
    std = np.sqrt(var)
    std[seg.counts <= 1] = 0
    return np.hstack([
        mean,
        segment_aggregate(X, seg, "max"),
        segment_aggregate(X, seg, "min"),
        std,
        segment_aggregate(X, seg, "sum"),
    ])


def relaggs_propositionalize(batch: BatchBundle, plan: AggregationPlan) -> np.ndarray:
    """n x D propositional matrix for the batch (plan in execution order)."""
    steps = plan.execution_steps()
    if len(batch.x_data) != len(plan.table_order) or tuple(batch.parents) != tuple(
        plan.parent.get(t, -1) for t in range(len(plan.table_order))
    ):
        raise PlanMismatch("batch was collated with a different plan")
    agg = list(batch.x_data)
    for nexts, current in steps:
        n_parent = batch.x_data[current].shape[0]
        blocks = [static_aggregate(agg[c], SegmentIndex(batch.x_ids[c], n_parent)) for c in nexts]
        agg[current] = np.hstack(blocks + [batch.x_data[current]])
    return agg[0]


def relaggs_width(plan: AggregationPlan, widths) -> int:
    """Closed-form output width D."""
    full = list(widths)
    for nexts, current in plan.execution_steps():
        full[current] = widths[current] + sum(len(STATIC_AGGREGATES) * full[c] for c in nexts)
    return full[0]


def relaggs_feature_names(plan: AggregationPlan, table_feature_names: dict[str, list[str]]) -> list[str]:
    names = {t: list(table_feature_names[n]) for t, n in enumerate(plan.table_order)}
    for nexts, current in plan.execution_steps():
        cols = []
        for c in nexts:
            child = plan.table_order[c]
            cols += [f"{kind}[{child}]({f})" for kind in STATIC_AGGREGATES for f in names[c]]
        names[current] = cols + names[current]
    return names[0]
