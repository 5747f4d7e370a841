"""Named-tensor files: a JSON manifest (name, shape, row-major values) or .npz."""
import json
import os

import numpy as np

TENSOR_FORMAT = "seqnav-tensors/1"


def save_tensors(path: str, tensors: dict):
    if str(path).endswith(".npz"):
        np.savez(path, **{k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()})
        return
    doc = {
        "format": TENSOR_FORMAT,
        "tensors": [
            {"name": k, "shape": list(np.shape(v)), "values": np.asarray(v, dtype=np.float64).ravel().tolist()}
            for k, v in tensors.items()
        ],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f)
    os.replace(tmp, path)


def load_tensors(path: str) -> dict:
    if str(path).endswith(".npz"):
        with np.load(path) as z:
            return {k: np.array(z[k], dtype=np.float64) for k in z.files}
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != TENSOR_FORMAT:
        raise ValueError(f"{path}: expected format {TENSOR_FORMAT!r}, got {doc.get('format')!r}")
    out = {}
    for t in doc["tensors"]:
        shape = tuple(t["shape"])
        vals = np.asarray(t["values"], dtype=np.float64)
        if vals.size != int(np.prod(shape, dtype=np.int64)):
            raise ValueError(f"{path}: tensor {t['name']} has {vals.size} values for shape {shape}")
        out[t["name"]] = vals.reshape(shape)
    return out
