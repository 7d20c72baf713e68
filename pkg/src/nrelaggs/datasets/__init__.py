"""Bundled benchmark databases (converted from the neuralogic package, MIT license)."""

from pathlib import Path

ROOT = Path(__file__).parent

AVAILABLE = ("trains", "mutagenesis188")


def schema_path(name: str) -> Path:
    if name not in AVAILABLE:
        raise KeyError(f"no bundled dataset {name!r}; available: {', '.join(AVAILABLE)}")
    return ROOT / name / "schema.json"


def load(name: str):
    from ..schema import load_database

    return load_database(schema_path(name))
