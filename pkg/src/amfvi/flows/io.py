"""Self-describing ``.npz`` serialization of experts.

Arrays are stored verbatim so a save/load round trip is bit-exact; the
architecture and metadata travel as a JSON string in the same archive.
"""

from __future__ import annotations

import io
import json

import numpy as np

from .base import FlowExpert
from .gradient import GradientFlow
from .rbig import RBIG, MarginalMap
from .training import FlowConfig, build_expert

FORMAT_VERSION = 1


def expert_to_arrays(expert: FlowExpert, prefix: str = "") -> dict[str, np.ndarray]:
    header = {
        "format": FORMAT_VERSION,
        "kind": expert.kind,
        "dim": expert.dim,
        "flags": sorted(expert.flags),
        "meta": expert.meta,
    }
    arrays = {}
    if isinstance(expert, GradientFlow):
        header["hidden"] = list(expert.hidden)
        header["n_layers"] = len(expert.layers)
        arrays["params"] = expert.params
    elif isinstance(expert, RBIG):
        header["n_layers"] = expert.n_layers
        if expert.n_layers:
            arrays["x_nodes"] = np.array([[m.x for m in maps] for maps in expert.marginals])
            arrays["y_nodes"] = np.array([[m.y for m in maps] for maps in expert.marginals])
            arrays["tail_slopes"] = np.array(
                [[(m.lo_slope, m.hi_slope) for m in maps] for maps in expert.marginals])
            arrays["rotations"] = np.array(expert.rotations)
    else:
        raise TypeError(f"cannot serialize {type(expert).__name__}")
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    return {prefix + k: v for k, v in arrays.items()}


def expert_from_arrays(arrays, prefix: str = "") -> FlowExpert:
    header = json.loads(bytes(arrays[prefix + "header"]).decode())
    kind, dim = header["kind"], header["dim"]
    if kind in ("realnvp", "maf"):
        cfg = FlowConfig(hidden=tuple(header["hidden"]),
                         **{f"{kind}_layers": header["n_layers"]})
        expert = build_expert(kind, dim, cfg)
        expert.params[:] = arrays[prefix + "params"]
    elif kind == "rbig":
        expert = RBIG(dim)
        if header["n_layers"]:
            xs, ys = arrays[prefix + "x_nodes"], arrays[prefix + "y_nodes"]
            tails, rots = arrays[prefix + "tail_slopes"], arrays[prefix + "rotations"]
            for layer in range(header["n_layers"]):
                expert.marginals.append([MarginalMap(xs[layer, j], ys[layer, j], *tails[layer, j])
                                         for j in range(dim)])
                expert.rotations.append(np.array(rots[layer]))
    else:
        raise ValueError(f"unknown expert kind {kind!r} in archive")
    expert.flags = set(header["flags"])
    expert.meta = header["meta"]
    return expert.freeze()


def save_expert(expert: FlowExpert, path) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, **expert_to_arrays(expert))


def load_expert(path) -> FlowExpert:
    with np.load(path) as npz:
        return expert_from_arrays({k: npz[k] for k in npz.files})


def dumps(expert: FlowExpert) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, **expert_to_arrays(expert))
    return buf.getvalue()
