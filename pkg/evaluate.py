import argparse
import json
import os
import sys

import numpy as np
import pandas as pd
from accelerate.logging import get_logger

from dataloader.dataset_class import read_embeddings, validation_indices
from dataloader.synthetic import generate_synthetic_teacher, heldout_spec
from losses.metric import DEFAULT_FAR_GRID, compare_roc, verification_eval
from models.mlp import project
from pipelines.pipeline_uncertainty import mc_infer_batch
from utils.capacity_utils import capacity_vs_tar
from utils.checkpoint_utils import load_checkpoint
from utils.cli_utils import (add_config_args, collect_overrides, parse_list_float, resolve_config, run_main, setup_run,
                             stage, to_run_config, write_report)
from utils.errors import DimensionMismatch, ValidationError

logger = get_logger(__name__, log_level="INFO")


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="Compare teacher and student verification performance.")
    add_config_args(parser)
    parser.add_argument('--input', type=str, default=None, help="Embedding file (label,f0,f1,...).")
    parser.add_argument('--synth', type=str, nargs="?", const="default", default=None,
                        help="Evaluate on the config's synthetic teacher instead of --input.")
    parser.add_argument('--student', type=str, default=None, help="Student checkpoint (default <out-dir>/student.repcap).")
    parser.add_argument('--projector', type=str, default=None,
                        help="Projector or PCA checkpoint (default <out-dir>/projector.repcap if present).")
    parser.add_argument('--mc-passes', dest="mc_passes", type=int, default=None)
    parser.add_argument('--far-grid', dest="far_grid", type=parse_list_float, default=list(DEFAULT_FAR_GRID),
                        help="Comma-separated FARs of the ROC grid.")
    parser.add_argument('--eval-pairs', dest="eval_pairs", type=int, default=None)
    parser.add_argument('--reference-far', dest="reference_far", type=float, default=1e-2,
                        help="FAR at which TAR is paired with capacity.")
    parser.add_argument('--heldout', action="store_true",
                        help="Score records the student never saw: fresh synthetic identities behind the same lift, "
                             "or the validation split of --input.")
    parser.add_argument('--shuffle-labels', dest="shuffle_labels", action="store_true",
                        help="Null check: TAR should match FAR.")
    parser.add_argument('--path_to_csv', type=str, default=None,
                        help="Capacity vs TAR table; rows are appended, a new file is created if none exists.")
    return parser.parse_args(argv)


def load_inputs(run_config, heldout=False):
    general = run_config.general
    if general.synth is not None:
        spec = heldout_spec(run_config.synth) if heldout else run_config.synth
        return generate_synthetic_teacher(spec).embeddings
    if general.input is None:
        raise ValidationError("One of --input or --synth is required.")
    data = read_embeddings(general.input)
    if heldout:
        student = run_config.student
        data = data.subset(validation_indices(len(data), student.val_fraction, student.seed))
    return data


def default_path(explicit, out_dir, name):
    if explicit is not None:
        return explicit
    return os.path.join(out_dir, name)


def capacity_at(report_path, far):
    '''log10 capacity of the report row closest to `far`, or None without a report.'''
    if not os.path.isfile(report_path):
        return None
    with open(report_path, "r", encoding="utf-8") as f:
        rows = json.load(f)["reports"]
    best = min(rows, key=lambda r: abs(np.log(r["far"]) - np.log(far)))
    return float(best["log10_capacity"])


def append_capacity_row(csv_filename, index_value, log10_capacity, tar):
    if os.path.exists(csv_filename):
        df_existing = pd.read_csv(csv_filename)
        df_existing = df_existing[df_existing["run"] != index_value]
    else:
        df_existing = pd.DataFrame(columns=["run", "log10_capacity", "tar"])
    runs = {row["run"]: {"log10_capacity": row["log10_capacity"], "tar": row["tar"]}
            for row in df_existing.to_dict(orient="records")}
    runs[index_value] = {"log10_capacity": log10_capacity, "tar": tar}
    capacity_vs_tar(runs).to_csv(csv_filename, index=False)


def main(args):
    config = resolve_config(args.config, collect_overrides(args), args.dotlist)
    with stage("config"):
        run_config = to_run_config(config)
    setup_run(run_config.general.seed)
    out_dir = run_config.general.out_dir
    seed = run_config.general.seed

    with stage("data"):
        data = load_inputs(run_config, heldout=args.heldout)
        if args.shuffle_labels:
            data = data.shuffled_labels(np.random.default_rng(seed))

    with stage("checkpoint"):
        student = load_checkpoint(default_path(args.student, out_dir, "student.repcap"), role="student")
        projector_path = default_path(args.projector, out_dir, "projector.repcap")
        if args.projector is not None or os.path.isfile(projector_path):
            teacher_targets = project(load_checkpoint(projector_path), data.vectors)
        else:
            logger.info("No projector checkpoint, comparing against the raw embeddings.")
            teacher_targets = data.vectors
        if student.in_features != data.dim or student.out_features != teacher_targets.shape[1]:
            raise DimensionMismatch(f"Student maps {student.in_features} -> {student.out_features}, data is "
                                    f"{data.dim} -> {teacher_targets.shape[1]}.")

    with stage("inference"):
        inference = run_config.inference
        mu_hat = mc_infer_batch(student, data.vectors, num_passes=inference.mc_passes, base_seed=inference.seed,
                                chunk_size=inference.chunk_size).mu_hat

    with stage("verification"):
        teacher = data.with_vectors(teacher_targets)
        roc, spearman = compare_roc(teacher, data.with_vectors(mu_hat), pair_count=run_config.general.eval_pairs,
                                    far_grid=args.far_grid, seed=seed)
        reference = verification_eval(teacher, run_config.general.eval_pairs, [args.reference_far], seed)

    os.makedirs(out_dir, exist_ok=True)
    roc.to_csv(os.path.join(out_dir, "roc.csv"), index=False)
    tar = float(reference.roc["tar"].iloc[0])
    log10_capacity = capacity_at(os.path.join(out_dir, "report.json"), args.reference_far)
    write_report({"roc": roc.to_dict(orient="records"), "spearman": spearman, "reference_far": args.reference_far,
                  "reference_tar": tar, "log10_capacity": log10_capacity, "shuffled_labels": args.shuffle_labels,
                  "held_out": args.heldout, "num_records": len(data)},
                 os.path.join(out_dir, "eval_report.json"), config)

    if args.path_to_csv is not None and log10_capacity is not None:
        append_capacity_row(args.path_to_csv, os.path.basename(os.path.normpath(out_dir)), log10_capacity, tar)

    print(roc.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"spearman {spearman:.4f}")
    logger.info(f"TAR {tar:.4f} at FAR {args.reference_far:g}, log10 capacity {log10_capacity}.")


if __name__ == "__main__":
    args = parse_args()
    sys.exit(run_main(main, args))
