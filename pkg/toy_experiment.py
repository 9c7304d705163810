import argparse
import os
import sys

import numpy as np
import pandas as pd
from accelerate.logging import get_logger

from dataloader.synthetic import generate_toy
from pipelines.pipeline_oracle import toy_capacity_experiment
from utils.capacity_utils import far_to_radius
from utils.cli_utils import (add_config_args, collect_overrides, parse_list_float, resolve_config, run_main,
                             save_run_config, setup_run, stage, to_run_config, write_report)
from utils.general_utils import plot_toy

logger = get_logger(__name__, log_level="INFO")


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="Capacity of the two-dimensional toy population.")
    add_config_args(parser)
    parser.add_argument('--classes', type=int, default=None, help="Number of classes (default 100).")
    parser.add_argument('--samples-per-class', dest="samples_per_class", type=int, default=None)
    parser.add_argument('--far', type=parse_list_float, action="extend", default=None,
                        help="False accept rate; only the first value is used.")
    parser.add_argument('--selector', type=str, choices=["min", "mean", "median", "max"], default=None)
    parser.add_argument('--plot', action="store_true", default=None, help="Write toy.png to --out-dir.")
    return parser.parse_args(argv)


def format_report(out, far, selector):
    table = pd.DataFrame(
        {
            "population_area": [out.areas["estimated_population"], out.areas["ground_truth_population"],
                                out.areas["population_hull"]],
            "class_area": [out.areas["estimated_class"], out.areas["ground_truth_class"], out.areas["class_hull"]],
            "capacity": [out.estimated_capacity, out.ground_truth_capacity, out.hull_capacity],
        },
        index=pd.Index(["ellipse (fitted)", "ground truth", "convex hull"], name="method"),
    )
    lines = [
        f"Capacity of the two-dimensional toy at FAR {far:g} (selector {selector}, class {out.class_id})",
        table.to_string(float_format=lambda v: f"{v:.4f}"),
        "",
        "population covariance (fitted):",
        np.array2string(out.estimated_population_cov, precision=4, suppress_small=True),
        "population covariance (ground truth):",
        np.array2string(out.ground_truth_population_cov, precision=4, suppress_small=True),
        "class covariance (fitted):",
        np.array2string(out.estimated_class_cov, precision=4, suppress_small=True),
        "class covariance (ground truth):",
        np.array2string(out.ground_truth_class_cov, precision=4, suppress_small=True),
        "selected classes: " + ", ".join(f"{k}={v}" for k, v in sorted(out.selected_classes.items())),
    ]
    return "\n".join(lines)


def main(args):
    config = resolve_config(args.config, collect_overrides(args), args.dotlist)
    with stage("config"):
        run_config = to_run_config(config)
    setup_run(run_config.general.seed)

    far = run_config.capacity.fars[0]
    selector = run_config.capacity.selector
    with stage("toy"):
        out = toy_capacity_experiment(run_config.toy, selector=selector, far=far)
    print(format_report(out, far, selector))

    if args.out_dir is not None:
        save_run_config(config, args.out_dir)
        write_report({
            "far": far,
            "selector": selector,
            "class_id": out.class_id,
            "estimated_capacity": out.estimated_capacity,
            "ground_truth_capacity": out.ground_truth_capacity,
            "hull_capacity": out.hull_capacity,
            "estimated_population_cov": out.estimated_population_cov,
            "ground_truth_population_cov": out.ground_truth_population_cov,
            "estimated_class_cov": out.estimated_class_cov,
            "ground_truth_class_cov": out.ground_truth_class_cov,
            "areas": out.areas,
            "selected_classes": out.selected_classes,
        }, os.path.join(args.out_dir, "toy_report.json"), config)
        if run_config.general.plot:
            plot_toy(generate_toy(run_config.toy).samples, out.selected_classes, far_to_radius(far, 2),
                     save_name=os.path.join(args.out_dir, "toy"))
        logger.info(f"Toy report written to {args.out_dir}")


if __name__ == "__main__":
    args = parse_args()
    sys.exit(run_main(main, args))
