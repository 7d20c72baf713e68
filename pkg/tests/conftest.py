import random

import numpy as np
import pytest

from nrelaggs import datasets
from nrelaggs.preprocess import build_instances, collate, fit_preprocessor, generate_aggregation_plan
from nrelaggs.schema import ColumnSpec as C
from nrelaggs.schema import TableSpec, database_from_rows


def movielens_tables():
    # declaration order fixes join_children order: movies -> [movies2actors, movies2directors, u2base]
    return [
        TableSpec("users", [C("userid", "key"), C("age", "numeric"), C("u_gender", "categorical")]),
        TableSpec("movies", [C("movieid", "key"), C("year", "numeric"), C("country", "categorical")]),
        TableSpec("movies2actors", [C("ma_id", "key"), C("movieid", "foreign_key", "movies"),
                                    C("actorid", "foreign_key", "actors"), C("cast_num", "numeric")]),
        TableSpec("movies2directors", [C("md_id", "key"), C("movieid", "foreign_key", "movies"),
                                       C("directorid", "foreign_key", "directors"), C("genre", "categorical")]),
        TableSpec("u2base", [C("ub_id", "key"), C("userid", "foreign_key", "users"),
                             C("movieid", "foreign_key", "movies"), C("rating", "numeric")]),
        TableSpec("actors", [C("actorid", "key"), C("a_gender", "categorical"), C("a_quality", "numeric")]),
        TableSpec("directors", [C("directorid", "key"), C("d_quality", "numeric")]),
    ]


def make_movielens(seed=0, n_users=8, n_movies=6):
    """Small random database with the MovieLens join graph (a snowflake rooted at users)."""
    rng = random.Random(seed)
    rows = {
        "users": [[f"u{i}", rng.randint(18, 60), "M" if i % 2 else "F"] for i in range(n_users)],
        "movies": [[f"m{i}", rng.randint(1990, 2000), rng.choice(["US", "UK", "FR"])] for i in range(n_movies)],
        "actors": [[f"a{i}", rng.choice(["M", "F"]), rng.randint(0, 4)] for i in range(5)],
        "directors": [[f"d{i}", rng.randint(0, 4)] for i in range(3)],
    }
    rows["movies2actors"] = [
        [f"ma{j}", f"m{rng.randrange(n_movies)}", f"a{rng.randrange(5)}", rng.randint(0, 3)] for j in range(10)
    ]
    rows["movies2directors"] = [
        [f"md{j}", f"m{j % n_movies}", f"d{rng.randrange(3)}", rng.choice(["drama", "comedy"])] for j in range(n_movies)
    ]
    rows["u2base"] = [
        [f"ub{j}", f"u{rng.randrange(n_users)}", f"m{rng.randrange(n_movies)}", rng.randint(1, 5)] for j in range(20)
    ]
    return database_from_rows(movielens_tables(), rows, "users", "u_gender")


@pytest.fixture
def movielens():
    return make_movielens()


def make_star(seed=0, n=6, max_children=4, width=1):
    """Target table with one numeric column and a child table of `width` numeric columns."""
    rng = np.random.default_rng(seed)
    tables = [
        TableSpec("target", [C("id", "key"), C("t0", "numeric"), C("label", "categorical")]),
        TableSpec("child", [C("cid", "key"), C("tid", "foreign_key", "target")] + [C(f"c{j}", "numeric") for j in range(width)]),
    ]
    rows = {"target": [[f"t{i}", float(rng.normal()), "pos" if i % 2 else "neg"] for i in range(n)], "child": []}
    for i in range(n):
        for _ in range(int(rng.integers(0, max_children + 1))):
            rows["child"].append([f"c{len(rows['child'])}", f"t{i}"] + [float(v) for v in rng.normal(size=width)])
    return database_from_rows(tables, rows, "target", "label")


@pytest.fixture(scope="session")
def trains():
    return datasets.load("trains")


@pytest.fixture(scope="session")
def trains_batch(trains):
    plan = generate_aggregation_plan(trains)
    keys = trains.instance_keys()
    state = fit_preprocessor(trains, keys)
    instances = build_instances(trains, state, plan, keys)
    return plan, state, instances, collate(instances)


@pytest.fixture(scope="session")
def mutagenesis():
    return datasets.load("mutagenesis188")


# one PASS/FAIL line per acceptance criterion, filled in by tests/test_acceptance.py
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
