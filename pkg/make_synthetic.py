import argparse
import os
import sys
from dataclasses import asdict

from accelerate.logging import get_logger

from dataloader.dataset_class import write_embeddings
from dataloader.synthetic import generate_synthetic_teacher, write_synthetic_teacher
from pipelines.pipeline_oracle import oracle_capacity
from utils.cli_utils import add_config_args, collect_overrides, resolve_config, run_main, setup_run, stage, to_run_config

logger = get_logger(__name__, log_level="INFO")

# argparse destination -> synth key
SYNTH_FLAGS = {
    "latent_dim": "synth.latent_dim",
    "ambient_dim": "synth.ambient_dim",
    "synth_classes": "synth.n_classes",
    "synth_samples": "synth.samples_per_class",
    "between_scale": "synth.between_scale",
    "within_scale": "synth.within_scale",
    "lift": "synth.lift.kind",
}


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="Write a synthetic teacher embedding file and its ground truth.")
    add_config_args(parser)
    parser.add_argument('--output', type=str, required=True, help="Embedding CSV; the sidecar is <output>.truth.json.")
    parser.add_argument('--latent-dim', dest="latent_dim", type=int, default=None)
    parser.add_argument('--ambient-dim', dest="ambient_dim", type=int, default=None)
    parser.add_argument('--classes', dest="synth_classes", type=int, default=None)
    parser.add_argument('--samples-per-class', dest="synth_samples", type=int, default=None)
    parser.add_argument('--between-scale', dest="between_scale", type=float, default=None)
    parser.add_argument('--within-scale', dest="within_scale", type=float, default=None)
    parser.add_argument('--lift', type=str, choices=["tanh", "identity"], default=None)
    parser.add_argument('--write-latent', dest="write_latent", action="store_true",
                        help="Also write the latent vectors to <output>.latent.csv.")
    return parser.parse_args(argv)


def main(args):
    overrides = collect_overrides(args)
    overrides.update({key: getattr(args, dest) for dest, key in SYNTH_FLAGS.items() if getattr(args, dest) is not None})
    config = resolve_config(args.config, overrides, args.dotlist)
    with stage("config"):
        run_config = to_run_config(config)
    setup_run(run_config.general.seed)

    spec = run_config.synth
    with stage("synth"):
        data = generate_synthetic_teacher(spec)
        directory = os.path.dirname(os.path.abspath(args.output))
        os.makedirs(directory, exist_ok=True)
        sidecar = write_synthetic_teacher(data, args.output, spec)
        if args.write_latent:
            write_embeddings(data.latent, os.path.splitext(args.output)[0] + ".latent.csv")
        cap = run_config.capacity
        reports = [oracle_capacity(data.ground_truth, far, cap.population_fraction, cap.selector, cap.param,
                                   shannon_pairing=cap.shannon_pairing) for far in sorted(cap.fars)]

    logger.info(f"Wrote {len(data.embeddings)} records to {args.output} and ground truth to {sidecar}.")
    logger.info(f"Spec: {asdict(spec)}")
    for report in reports:
        print(f"oracle FAR {report.far:g}: log10 capacity {report.log10_capacity:.4f}")


if __name__ == "__main__":
    args = parse_args()
    sys.exit(run_main(main, args))
