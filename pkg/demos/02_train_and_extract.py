"""
Training trainable aggregates and exporting the embedding
=========================================================

Fit an N-RELAGGS model on all trains, then read out the aggregated
representation that sits in front of the predictor.
"""

import numpy as np

from nrelaggs import datasets
from nrelaggs.evaluation import accuracy
from nrelaggs.model import NRelaggsConfig, build_model, extract_features, feature_names, predict, set_identity_aggregation, train
from nrelaggs.preprocess import build_instances, collate, fit_preprocessor, generate_aggregation_plan
from nrelaggs.relaggs import relaggs_propositionalize

db = datasets.load("trains")
plan = generate_aggregation_plan(db)
keys = db.instance_keys()
state = fit_preprocessor(db, keys)
instances = build_instances(db, state, plan, keys)
batch = collate(instances)

config = NRelaggsConfig(generation_factor=0.75, selection_factor=0.5, predictor_layers=(50,), seed=1)
model = build_model(batch.widths, plan, config)
layer = model.layers[plan.index("cars")]
print(f"cars layer: {layer.n_in} -> {layer.generation.n_out} x 4 aggregates -> {layer.n_out}")

train(model, instances, None, config)
h = model.history
print(f"epochs {h['epochs_run']}, best {h['best_epoch']}, loss {h['train_loss'][0]:.3f} -> {min(h['train_loss']):.3f}")
labels, scores = predict(model, batch)
print("training accuracy:", accuracy(labels, batch.y))

embedding = extract_features(model, batch)
print("pre-predictor embedding:", embedding.shape)

# With identity layers the same pipeline reproduces plain sum/mean/min/max.
identity = build_model(batch.widths, plan, NRelaggsConfig())
set_identity_aggregation(identity)
names = feature_names(identity, {t: state.feature_names(t) for t in plan.table_order})
static = relaggs_propositionalize(batch, plan)
print("identity column 0:", names[0])
print("matches the static max column:", np.array_equal(
    extract_features(identity, batch)[:, names.index("max[cars](cars.wheels)")],
    static[:, 1 * state.width("cars") + state.feature_names("cars").index("cars.wheels")],
))
