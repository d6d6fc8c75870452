from datetime import datetime
import dataclasses
import json
import math
import os

import numpy as np


def to_dict_helper(instance):
    """Shared utility for converting ledger rows to dictionaries"""
    d = {}
    for column in instance.__table__.columns:
        value = getattr(instance, column.name)
        if isinstance(value, datetime):
            d[column.name] = value.isoformat()
        else:
            d[column.name] = value
    return d


def to_json_primitive(value):
    """Recursively convert value to JSON-serializable primitives."""
    if value is None:
        return None
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no NaN/Inf; undefined scores travel as null
        return value if math.isfinite(value) else None
    if isinstance(value, str):
        return value
    if isinstance(value, np.ndarray):
        return to_json_primitive(value.tolist())
    if isinstance(value, (list, tuple, set)):
        return [to_json_primitive(v) for v in value]
    if isinstance(value, dict):
        return {str(k): to_json_primitive(v) for k, v in value.items()}
    if isinstance(value, datetime):
        return value.isoformat()
    # pydantic models
    if hasattr(value, "model_dump") and callable(getattr(value, "model_dump")):
        return to_json_primitive(value.model_dump())
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return to_json_primitive(dataclasses.asdict(value))
    if hasattr(value, "to_dict") and callable(getattr(value, "to_dict")):
        return to_json_primitive(value.to_dict())
    return str(value)


def dump_json(path, payload, indent=2):
    """Write payload as JSON, creating the parent directory if needed."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_json_primitive(payload), f, indent=indent, sort_keys=False)
        f.write("\n")
    return path


def load_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def derive_seed(seed: int, index: int) -> int:
    """Deterministic per-job seed from (global seed, job index)."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)
    return int(state[0])
