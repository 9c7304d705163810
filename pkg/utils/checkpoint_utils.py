import json
import os
import struct

import numpy as np
import torch
from diffusers.utils import logging

from models.mlp import MlpNetwork
from models.pca import LinearProjector
from models.student import StudentNetwork
from utils.errors import CheckpointError

logger = logging.get_logger(__name__)  # pylint: disable=invalid-name

MAGIC = b"REPCAP\x01"
FORMAT_VERSION = 1
ROLES = ("projector", "student", "pca")
POPULATION_KEYS = ("population_mean", "population_logvar")


def _model_config(model):
    return {k: v for k, v in dict(model.config).items() if not k.startswith("_")}


def _blobs_for(model, role):
    if role == "pca":
        return [("components", model.components), ("mean", model.mean), ("explained_variance", model.explained_variance)]
    state = model.state_dict()
    weights = [(name, t.detach().numpy()) for name, t in state.items() if name not in POPULATION_KEYS]
    if role == "student":
        # (mu_g, l_g) travel as one extra blob after the layer weights
        population = np.stack([state["population_mean"].numpy(), state["population_logvar"].detach().numpy()])
        weights.append(("population", population))
    return weights


def save_checkpoint(model, path, role):
    '''
    MAGIC | uint32 little-endian header length | UTF-8 JSON header | little-endian float64 blobs.
    '''
    if role not in ROLES:
        raise CheckpointError(f"Unknown checkpoint role: {role}.")
    blobs = _blobs_for(model, role)
    header = {"version": FORMAT_VERSION, "role": role,
              "tensors": [{"name": name, "shape": list(np.shape(a))} for name, a in blobs]}
    if role == "pca":
        header.update(layer_sizes=[int(model.in_features), int(model.out_features)], dropout_rates=[], seed=None)
    else:
        config = _model_config(model)
        trunk = model.trunk if role == "student" else model
        header.update(layer_sizes=list(trunk.config.layer_sizes) + ([model.config.out_dim] if role == "student" else []),
                      dropout_rates=list(trunk.config.dropout_rates), seed=config.get("seed"), config=config)
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(raw_header)))
        f.write(raw_header)
        for _, array in blobs:
            f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    logger.info(f"Saved {role} checkpoint to {path}.")


def read_checkpoint(path):
    '''Returns (header, {name: array}) after validating the framing.'''
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic).")
    offset = len(MAGIC)
    if len(raw) < offset + 4:
        raise CheckpointError(f"{path} is truncated.")
    (header_len,) = struct.unpack("<I", raw[offset:offset + 4])
    offset += 4
    try:
        header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path} has a corrupt header: {err}") from err
    offset += header_len
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path} has unsupported version {header.get('version')}.")
    if header.get("role") not in ROLES:
        raise CheckpointError(f"{path} has unknown role {header.get('role')}.")

    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + n_bytes > len(raw):
            raise CheckpointError(f"{path} is truncated at tensor {entry['name']}.")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=n_bytes // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += n_bytes
    if offset != len(raw):
        raise CheckpointError(f"{path} has {len(raw) - offset} trailing bytes.")
    return header, arrays


def load_checkpoint(path, role=None):
    header, arrays = read_checkpoint(path)
    if role is not None and header["role"] != role:
        raise CheckpointError(f"{path} holds a {header['role']} checkpoint, expected {role}.")

    if header["role"] == "pca":
        return LinearProjector(arrays["components"], arrays["mean"], arrays["explained_variance"])

    model_cls = StudentNetwork if header["role"] == "student" else MlpNetwork
    try:
        model = model_cls(**header["config"])
    except (TypeError, ValueError) as err:
        raise CheckpointError(f"{path} has an invalid model config: {err}") from err

    state = model.state_dict()
    population = arrays.pop("population", None)
    if header["role"] == "student":
        if population is None or population.shape != (2, model.config.out_dim):
            raise CheckpointError(f"{path} is missing the population blob.")
        arrays["population_mean"], arrays["population_logvar"] = population[0], population[1]
    if set(arrays) != set(state):
        raise CheckpointError(f"{path} tensors {sorted(arrays)} do not match the model {sorted(state)}.")
    for name, tensor in state.items():
        if tuple(tensor.shape) != arrays[name].shape:
            raise CheckpointError(f"{path}: {name} has shape {arrays[name].shape}, expected {tuple(tensor.shape)}.")
    model.load_state_dict({name: torch.from_numpy(a.copy()) for name, a in arrays.items()})
    model.eval()
    return model
