"""
From tables to one row per train
================================

Load the east/west trains, look at the aggregation plan, build the
per-instance bundles and flatten them with static aggregates.
"""

import numpy as np

from nrelaggs import datasets
from nrelaggs.preprocess import build_instances, collate, fit_preprocessor, generate_aggregation_plan
from nrelaggs.relaggs import relaggs_feature_names, relaggs_propositionalize
from nrelaggs.schema import class_distribution, table_statistics

db = datasets.load("trains")
for name, n_cols, n_rows in table_statistics(db):
    print(f"{name:8s} {n_cols:3d} columns {n_rows:4d} rows")
print("classes:", class_distribution(db))

# Deepest tables first.  For trains there is a single hop.
plan = generate_aggregation_plan(db)
print("plan:", plan.as_names())

# Statistics come from the training keys only; here every train is used.
keys = db.instance_keys()
state = fit_preprocessor(db, keys)
print("encoded cars columns:", state.feature_names("cars")[:6], "...")

instances = build_instances(db, state, plan, keys)
first = instances[0]
print(f"train {first.key}: {len(first.x_data[1])} cars, parent ids {first.x_ids[1].tolist()}")

# Concatenate all instances, then mean/max/min/std/sum over each train's cars.
batch = collate(instances)
matrix = relaggs_propositionalize(batch, plan)
names = relaggs_feature_names(plan, {t: state.feature_names(t) for t in plan.table_order})
print("propositional matrix:", matrix.shape)

# Open-roof cars counted per train: the sum of a one-hot column.
col = names.index("sum[cars](cars.roof=none)")
print("open-roof cars per train:", matrix[:, col].astype(int).tolist())
print("labels (+1 = west):      ", batch.y.tolist())
print("any NaN?", bool(np.isnan(matrix).any()))
