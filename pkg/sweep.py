import argparse
import itertools
import os
import sys

import pandas as pd
from accelerate.logging import get_logger

from dataloader.synthetic import read_ground_truth
from pipelines.pipeline_capacity import load_statistics
from pipelines.pipeline_oracle import oracle_sweep
from utils.capacity_utils import Selector, sweep_frame
from utils.cli_utils import (add_config_args, collect_overrides, parse_list_float, resolve_config, run_main, setup_run,
                             stage, to_run_config, write_report)
from utils.errors import ValidationError
from utils.general_utils import plot_sweep
from utils.stats_utils import Parameterization

logger = get_logger(__name__, log_level="INFO")

SWEEP_FARS = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 0.5]


def parse_list_str(value):
    return [x.strip() for x in value.split(',') if x.strip()]


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="Capacity as a function of the false accept rate.")
    add_config_args(parser)
    parser.add_argument('--statistics', type=str, default=None,
                        help="Cached statistics.npz; defaults to the one in --out-dir.")
    parser.add_argument('--far', type=parse_list_float, action="extend", default=None,
                        help=f"False accept rates, repeatable or comma-separated (default {SWEEP_FARS}).")
    parser.add_argument('--selectors', type=parse_list_str, default=[s.value for s in Selector],
                        help="Comma-separated canonical class selectors.")
    parser.add_argument('--params', type=parse_list_str, default=[p.value for p in Parameterization],
                        help="Comma-separated covariance parameterizations.")
    parser.add_argument('--population-fraction', dest="population_fraction", type=float, default=None)
    parser.add_argument('--shannon-pairing', dest="shannon_pairing", action="store_true", default=None)
    parser.add_argument('--min-samples', dest="min_samples", type=int, default=None)
    parser.add_argument('--class-spread', dest="class_spread", type=str, choices=["uncertainty", "total"], default=None)
    parser.add_argument('--truth', type=str, default=None, help="Ground-truth sidecar for oracle curves.")
    parser.add_argument('--output', type=str, default=None, help="CSV path (default <out-dir>/sweep_full.csv).")
    parser.add_argument('--plot', action="store_true", default=None)
    return parser.parse_args(argv)


def main(args):
    if args.far is not None and len(args.far) == 0:
        raise ValidationError("The FAR list is empty.", stage="sweep")
    if args.far is None:
        args.far = list(SWEEP_FARS)
    config = resolve_config(args.config, collect_overrides(args), args.dotlist)
    with stage("config"):
        run_config = to_run_config(config)
    setup_run(run_config.general.seed)

    out_dir = run_config.general.out_dir
    stats_path = args.statistics or os.path.join(out_dir, "statistics.npz")
    if not os.path.isfile(stats_path):
        raise FileNotFoundError(f"No cached statistics at {stats_path}; run "
                                f"`python estimate_capacity.py --out-dir {out_dir} ...` first.")

    cap = run_config.capacity
    with stage("sweep"):
        try:
            selectors = [Selector.parse(s) for s in args.selectors]
            params = [Parameterization.parse(p) for p in args.params]
        except ValueError as err:
            raise ValidationError(str(err)) from err
        statistics = load_statistics(stats_path)
        reports = []
        for param, selector in itertools.product(params, selectors):
            reports.extend(statistics.sweep(cap, selector=selector, param=param))
    frame = sweep_frame(reports)

    output = args.output or os.path.join(out_dir, "sweep_full.csv")
    os.makedirs(os.path.dirname(os.path.abspath(output)), exist_ok=True)
    frame.to_csv(output, index=False)
    logger.info(f"Wrote {len(frame)} rows to {output}")

    if args.truth is not None:
        with stage("oracle"):
            ground_truth = read_ground_truth(args.truth)
            oracle = [r for param, selector in itertools.product(params, selectors)
                      for r in oracle_sweep(ground_truth, sorted(cap.fars), cap.population_fraction, selector, param,
                                            shannon_pairing=cap.shannon_pairing)]
        oracle_frame = sweep_frame(oracle)
        oracle_output = os.path.splitext(output)[0] + "_oracle.csv"
        oracle_frame.to_csv(oracle_output, index=False)
        write_report({"fars": sorted(cap.fars), "reports": [r.to_dict() for r in oracle]},
                     os.path.splitext(output)[0] + "_oracle.json", config)

    if run_config.general.plot:
        plot_sweep(frame, save_name=os.path.splitext(output)[0])
    print(pd.pivot_table(frame, index="far", columns=["parameterization", "selector"],
                         values="log10_capacity").to_string(float_format=lambda v: f"{v:.4f}"))


if __name__ == "__main__":
    args = parse_args()
    sys.exit(run_main(main, args))
