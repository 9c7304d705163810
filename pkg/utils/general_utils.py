import importlib
import json
import math
import os

import matplotlib.pyplot as plt
import numpy as np
import torch
from diffusers.utils import logging
from matplotlib.patches import Ellipse, Polygon

from .hull_utils import convex_hull_2d

logger = logging.get_logger(__name__)  # pylint: disable=invalid-name

THREADS_ENV = "REPCAP_THREADS"


def get_obj_from_str(string):
    module, cls = string.rsplit(".", 1)
    return getattr(importlib.import_module(module, package=None), cls)


def instantiate_from_config(config):
    if not "target" in config:
        raise Exception("target not in config! ", config)
    return get_obj_from_str(config["target"])(**config.get("params", dict()))


def flatten_dict(d, parent_key='', sep='.'):
    items = []
    for k, v in d.items():
        new_key = f"{parent_key}{sep}{k}" if parent_key else k
        if isinstance(v, dict):
            items.extend(flatten_dict(v, new_key, sep=sep).items())
        else:
            items.append((new_key, v))
    return dict(items)


def flatten_and_filter_config(config):
    flat_config = flatten_dict(config)
    filtered_config = {}
    for key, value in flat_config.items():
        if value is None or isinstance(value, (int, float, str, bool)):
            filtered_config[key] = value
        else:
            filtered_config[key] = str(value)  # Convert unsupported types to string
    return filtered_config


def to_serializable(obj):
    '''numpy/enum aware conversion for json.dump; non-finite floats become strings.'''
    if isinstance(obj, dict):
        return {str(k): to_serializable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_serializable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_serializable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else str(value)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_serializable(obj), f, indent=2, sort_keys=True)


def set_num_threads_from_env():
    threads = os.environ.get(THREADS_ENV)
    if threads:
        torch.set_num_threads(max(1, int(threads)))
        logger.info(f"{THREADS_ENV}={threads}: torch uses {torch.get_num_threads()} threads.")
    return torch.get_num_threads()


def plot_sweep(frame, save_name=None, dpi=300, font_size=12):
    '''
    frame: sweep rows (far, log10_capacity, parameterization, selector); one curve per (parameterization, selector)
    '''
    fig, ax = plt.subplots(figsize=(6, 4))
    for (param, selector), curve in frame.groupby(["parameterization", "selector"], sort=True):
        curve = curve.sort_values("far")
        ax.plot(curve["far"], curve["log10_capacity"], marker="o", ms=3, label=f"{param} / {selector}")
    ax.set_xscale("log")
    ax.set_xlabel("false accept rate", fontsize=font_size)
    ax.set_ylabel("log10 capacity", fontsize=font_size)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=font_size - 2)
    plt.tight_layout()
    if save_name is not None:
        plt.savefig(save_name + '.png', dpi=dpi, bbox_inches='tight')
    plt.close(fig)


def _ellipse(mean, cov, r, **kwargs):
    eigvals, eigvecs = np.linalg.eigh(cov)
    angle = math.degrees(math.atan2(eigvecs[1, -1], eigvecs[0, -1]))
    width, height = 2 * r * np.sqrt(np.maximum(eigvals[::-1], 0.0))
    return Ellipse(mean, width, height, angle=angle, fill=False, **kwargs)


def plot_toy(samples, selected_classes, radius, save_name=None, dpi=300):
    '''
    samples: 2-D EmbeddingSet; selected_classes: selector name -> class id.
    Draws every sample, then the fitted ellipse and convex hull of each selected class.
    '''
    groups = samples.indices_by_class()
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(samples.vectors[:, 0], samples.vectors[:, 1], s=2, c="lightgray")
    colors = plt.get_cmap("tab10")
    for k, (name, label) in enumerate(sorted(selected_classes.items())):
        points = samples.vectors[groups[label]]
        mean = points.mean(axis=0)
        cov = np.cov(points.T, bias=True)
        color = colors(k)
        ax.scatter(points[:, 0], points[:, 1], s=4, color=color, label=f"{name} ({label})")
        ax.add_patch(_ellipse(mean, cov, radius, color=color, lw=1.5))
        ax.add_patch(Polygon(convex_hull_2d(points), closed=True, fill=False, ls="--", color=color))
    ax.set_aspect("equal")
    ax.legend(fontsize=9)
    plt.tight_layout()
    if save_name is not None:
        plt.savefig(save_name + '.png', dpi=dpi, bbox_inches='tight')
    plt.close(fig)
