"""Parameter (de)serialization: one JSON document, bit-exact round trip.

Floats are written with Python's repr (shortest round-trip form), so loading
reproduces the exact same float64 values.
"""

from __future__ import annotations

import json

import numpy as np

from .layers import Parameter


def params_to_json(params: dict[str, Parameter]) -> str:
    doc = {
        name: {
            "shape": list(p.value.shape),
            "values": [float(v) for v in p.value.ravel()],
        }
        for name, p in params.items()
    }
    return json.dumps(doc, sort_keys=True)


def params_from_json(text: str) -> dict[str, Parameter]:
    doc = json.loads(text)
    out = {}
    for name, entry in doc.items():
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        out[name] = Parameter(arr)
    return out
