"""
A snowflake schema built in memory
==================================

Tables do not have to come from CSV files.  This builds a tiny
users / ratings / movies / actors database and shows how the plan walks it.
"""

from nrelaggs.model import NRelaggsConfig, build_model, forward
from nrelaggs.preprocess import build_instance, collate, fit_preprocessor, generate_aggregation_plan
from nrelaggs.schema import ColumnSpec as C
from nrelaggs.schema import TableSpec, database_from_rows, join_children

tables = [
    TableSpec("users", [C("uid", "key"), C("age", "numeric"), C("churned", "categorical")]),
    TableSpec("ratings", [C("rid", "key"), C("uid", "foreign_key", "users"), C("mid", "foreign_key", "movies"), C("stars", "numeric")]),
    TableSpec("movies", [C("mid", "key"), C("genre", "categorical")]),
    TableSpec("cast", [C("cid", "key"), C("mid", "foreign_key", "movies"), C("aid", "foreign_key", "actors")]),
    TableSpec("actors", [C("aid", "key"), C("popularity", "numeric")]),
]
rows = {
    "users": [["u1", 31, "no"], ["u2", 45, "yes"], ["u3", 22, "no"]],
    "ratings": [["r1", "u1", "m1", 5], ["r2", "u1", "m2", 3], ["r3", "u2", "m1", 1], ["r4", "u1", "m1", 4]],
    "movies": [["m1", "drama"], ["m2", "comedy"]],
    "cast": [["c1", "m1", "a1"], ["c2", "m1", "a2"], ["c3", "m2", "a2"]],
    "actors": [["a1", 0.9], ["a2", 0.4]],
}
db = database_from_rows(tables, rows, target_table="users", target_attribute="churned")

print("neighbours of movies:", join_children(db, "movies"))
plan = generate_aggregation_plan(db)
for nexts, current in plan.as_names():
    print(f"  aggregate {nexts} into {current}")

state = fit_preprocessor(db, db.instance_keys())
# u1 rated m1 twice, so m1 and its cast appear twice: rows follow join multiplicity.
u1 = build_instance(db, state, plan, "u1")
for t, name in enumerate(plan.table_order):
    print(f"  u1 {name:8s} rows {len(u1.x_data[t])}")

# u3 has no ratings at all; its child blocks are empty and aggregate to zeros.
batch = collate([build_instance(db, state, plan, k) for k in db.instance_keys()])
model = build_model(batch.widths, plan, NRelaggsConfig(predictor_layers=(8,)))
print("untrained scores:", [round(float(s), 3) for s in forward(model, batch)])
