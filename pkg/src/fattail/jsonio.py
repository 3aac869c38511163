"""JSON output with every float in 17-digit scientific notation."""
from __future__ import annotations

import json
import math
import re

import numpy as np

_TOKEN = "@@float@@"
_PAT = re.compile('"' + _TOKEN + '([^"]*)"')


def _tag(obj):
    if isinstance(obj, dict):
        return {str(k): _tag(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tag(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {v} in JSON output")
        return f"{_TOKEN}{v:.17e}"
    return obj


def dumps(obj) -> str:
    """Sorted, indented JSON; floats as %.17e (round-trips exactly)."""
    text = json.dumps(_tag(obj), indent=2, sort_keys=True)
    return _PAT.sub(lambda m: m.group(1), text) + "\n"
