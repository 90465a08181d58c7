"""Model container: a single .npz file tagged with the model kind.

Holds the profile matrices, the dictionary and its duals when present,
hyperparameters or training config as JSON, the objective trace, and a
format version; arbitrary extra metadata (for example the split settings
used in training) rides along as JSON.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .baselines import FactorModel
from .data import Hyperparams
from .dictionary import TopicDictionary
from .social import SoSTMState
from .stm import STMState

FORMAT_VERSION = 1


def save_model(model, path, extra_meta=None):
    """Serialize a trained model (STM-family state or FactorModel)."""
    payload = {
        "format_version": np.array(FORMAT_VERSION),
        "kind": np.array(model.kind),
        "meta_json": np.array(json.dumps(extra_meta or {})),
        "U": model.U,
        "V": model.V,
    }
    if isinstance(model, STMState):
        payload["atoms"] = model.dictionary.atoms
        payload["duals"] = model.dictionary.duals
        payload["objective_trace"] = np.array(model.objective_trace)
        payload["hyper_json"] = np.array(json.dumps(dataclasses.asdict(model.hyper)))
        if isinstance(model, SoSTMState):
            payload["Z"] = model.Z
    elif isinstance(model, FactorModel):
        payload["loss_trace"] = np.array(model.loss_trace)
        payload["config_json"] = np.array(json.dumps(model.config))
        if model.Z is not None:
            payload["Z"] = model.Z
    else:
        raise TypeError(f"cannot serialize model of type {type(model)!r}")
    np.savez_compressed(path, **payload)


def load_model(path):
    """Load a model container; returns (model, meta dict)."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        kind = str(data["kind"])
        meta = json.loads(str(data["meta_json"]))
        U, V = data["U"], data["V"]
        if kind in ("stm", "sostm", "ctr-i"):
            hyper = Hyperparams(**json.loads(str(data["hyper_json"])))
            dictionary = TopicDictionary(data["atoms"], data["duals"])
            trace = data["objective_trace"].tolist()
            if kind == "sostm":
                model = SoSTMState(dictionary, U, V, hyper, trace,
                                   kind=kind, Z=data["Z"])
            else:
                model = STMState(dictionary, U, V, hyper, trace, kind=kind)
        elif kind in ("pmf", "sorec"):
            config = json.loads(str(data["config_json"]))
            Z = data["Z"] if "Z" in data else None
            model = FactorModel(U, V, Z, data["loss_trace"].tolist(), kind,
                                config)
        else:
            raise ValueError(f"unknown model kind {kind!r}")
    return model, meta
