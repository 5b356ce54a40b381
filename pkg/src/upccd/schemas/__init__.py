"""JSON schemas for the files written by the command-line tool."""

import json
from importlib import resources


def load(name):
    """Schema for ``name`` (``pccd``, ``fidelity``, ``state``, ``qpe``, ``error`` or ``expansion``)."""
    return json.loads(resources.files(__name__).joinpath(f"{name}.schema.json").read_text())
