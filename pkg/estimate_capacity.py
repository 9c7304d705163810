import argparse
import os
import sys

from accelerate.logging import get_logger
from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from dataloader.dataset_class import EmbeddingSet, read_embeddings, validation_indices
from dataloader.synthetic import SyntheticTeacherSpec, generate_synthetic_teacher, read_ground_truth, sidecar_path
from losses.metric import compare_roc
from models.mlp import project
from models.pca import fit_pca
from pipelines.pipeline_capacity import CapacityPipeline, load_statistics, save_statistics
from pipelines.pipeline_oracle import oracle_sweep
from trainers.projector import train_projection
from trainers.student import train_student
from utils.capacity_utils import sweep_frame
from utils.checkpoint_utils import load_checkpoint, save_checkpoint
from utils.cli_utils import (add_capacity_args, add_config_args, collect_overrides, config_container, resolve_config,
                             run_main, save_run_config, setup_run, stage, to_run_config, write_report)
from utils.errors import ValidationError
from utils.general_utils import instantiate_from_config, plot_sweep

logger = get_logger(__name__, log_level="INFO")

PROJECTOR_FILE = "projector.repcap"
STUDENT_FILE = "student.repcap"
STATISTICS_FILE = "statistics.npz"
REPORT_FILE = "report.json"
SWEEP_FILE = "sweep.csv"


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="Estimate the identity capacity of an embedding.")
    add_config_args(parser)
    parser.add_argument('--input', type=str, default=None, help="Embedding file (label,f0,f1,...).")
    parser.add_argument('--synth', type=str, nargs="?", const="default", default=None,
                        help="Use a synthetic teacher: 'default' for the config's synth section or a YAML file.")
    parser.add_argument('--proj-dim', dest="proj_dim", type=int, default=None, help="Projection dimension m.")
    parser.add_argument('--epochs', type=int, default=None, help="Epochs for the projector and the student.")
    parser.add_argument('--lr', type=float, default=None, help="Learning rate for the projector and the student.")
    parser.add_argument('--reg-lambda', dest="reg_lambda", type=float, default=None, help="Projector weight penalty.")
    parser.add_argument('--lambda', dest="lambda_", type=float, default=None, help="Population term weight.")
    parser.add_argument('--gamma', type=float, default=None, help="Aleatoric regularizer weight.")
    parser.add_argument('--delta', type=float, default=None, help="Population regularizer weight.")
    parser.add_argument('--mc-passes', dest="mc_passes", type=int, default=None, help="Monte-Carlo passes (default 1000).")
    add_capacity_args(parser)
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--pca', action="store_true", help="Use a PCA projection instead of the learned projector.")
    group.add_argument('--skip-projection', dest="skip_projection", action="store_true",
                       help="Train the student directly on the embeddings.")
    parser.add_argument('--reuse', action="store_true", default=None, help="Reuse cached stages in --out-dir.")
    parser.add_argument('--plot', action="store_true", default=None, help="Write sweep.png.")
    parser.add_argument('--eval-pairs', dest="eval_pairs", type=int, default=None,
                        help="Pairs for the teacher/student fidelity check.")
    return parser.parse_args(argv)


def load_synth_spec(run_config, synth):
    if synth == "default":
        return run_config.synth
    if not os.path.isfile(synth):
        raise FileNotFoundError(f"Synthetic spec not found: {synth}")
    try:
        merged = OmegaConf.merge(OmegaConf.structured(run_config.synth), OmegaConf.load(synth))
        return OmegaConf.to_object(merged)
    except OmegaConfBaseException as err:
        raise ValidationError(f"Invalid synthetic spec {synth}: {err}") from err


def load_data(run_config):
    general = run_config.general
    if general.synth is not None and general.input is not None:
        raise ValidationError("Give either --input or --synth, not both.")
    if general.synth is not None:
        spec: SyntheticTeacherSpec = load_synth_spec(run_config, general.synth)
        data = generate_synthetic_teacher(spec)
        logger.info(f"Synthetic teacher: {len(data.embeddings)} records, latent {spec.latent_dim}, ambient {spec.ambient_dim}.")
        return data.embeddings, data.ground_truth
    if general.input is None:
        raise ValidationError("One of --input or --synth is required.")
    data = read_embeddings(general.input)
    logger.info(f"Read {len(data)} records of dimension {data.dim} from {general.input}.")
    truth = sidecar_path(general.input)
    if os.path.isfile(truth):
        logger.info(f"Found ground truth {truth}, the report will include oracle capacities.")
        return data, read_ground_truth(truth)
    return data, None


def cached(out_dir, name, reuse):
    path = os.path.join(out_dir, name)
    return path, reuse and os.path.isfile(path)


def run_projection(data: EmbeddingSet, run_config, out_dir, reuse):
    '''Returns (teacher targets, history, whether the stage was recomputed).'''
    arch = run_config.projector_arch
    if arch.method == "none":
        return data.vectors, {"method": "none"}, False

    path, hit = cached(out_dir, PROJECTOR_FILE, reuse)
    if hit:
        logger.info(f"Reusing projector {path}")
        projector = load_checkpoint(path, role="pca" if arch.method == "pca" else "projector")
        history = {"method": arch.method, "cached": True}
    elif arch.method == "pca":
        projector = fit_pca(data, arch.proj_dim)
        save_checkpoint(projector, path, role="pca")
        history = {"method": "pca", "explained_variance": projector.explained_variance}
    else:
        out = train_projection(data, arch.proj_dim, run_config.projector, width=arch.width, num_blocks=arch.num_blocks,
                               loss_fn=instantiate_from_config(run_config.projector_loss))
        projector = out.network
        save_checkpoint(projector, path, role="projector")
        history = {"method": "mlp", "train_losses": out.train_losses, "val_losses": out.val_losses}
    return project(projector, data.vectors), history, not hit


def run_student(data: EmbeddingSet, targets, run_config, out_dir, reuse):
    path, hit = cached(out_dir, STUDENT_FILE, reuse)
    if hit:
        logger.info(f"Reusing student {path}")
        return load_checkpoint(path, role="student"), {"cached": True}, False
    arch = run_config.student_arch
    out = train_student(data, targets, run_config.student, run_config.loss_weights, hidden_sizes=arch.hidden_sizes,
                        dropout_rate=arch.dropout_rate, loss_fn=instantiate_from_config(run_config.student_loss))
    save_checkpoint(out.network, path, role="student")
    return out.network, {"train_losses": out.train_losses, "val_losses": out.val_losses}, True


def main(args):
    config = resolve_config(args.config, collect_overrides(args), args.dotlist)
    if args.pca:
        OmegaConf.update(config, "projector_arch.method", "pca")
    elif args.skip_projection:
        OmegaConf.update(config, "projector_arch.method", "none")
    with stage("config"):
        run_config = to_run_config(config)

    accelerator = setup_run(run_config.general.seed)
    logger.info(accelerator.state, main_process_only=False)
    out_dir = run_config.general.out_dir
    reuse = run_config.general.reuse
    save_run_config(config, out_dir)

    with stage("data"):
        data, ground_truth = load_data(run_config)

    # a recomputed stage invalidates every cache downstream of it
    with stage("projection"):
        targets, projection_history, fresh = run_projection(data, run_config, out_dir, reuse)
    reuse = reuse and not fresh
    with stage("student"):
        student, student_history, fresh = run_student(data, targets, run_config, out_dir, reuse)
    reuse = reuse and not fresh

    pipeline = CapacityPipeline(student=student)
    pipeline.set_progress_bar_config(disable=True)
    stats_path, hit = cached(out_dir, STATISTICS_FILE, reuse)
    with stage("inference"):
        if hit:
            logger.info(f"Reusing statistics {stats_path}")
            statistics = load_statistics(stats_path)
        else:
            inference = run_config.inference
            statistics = pipeline.estimate(data.vectors, data.labels, inference.mc_passes, inference.seed,
                                           inference.chunk_size)
            save_statistics(statistics, stats_path)

    with stage("capacity"):
        out = pipeline(statistics=statistics, capacity=run_config.capacity)
    frame = sweep_frame(out.reports)
    frame.to_csv(os.path.join(out_dir, SWEEP_FILE), index=False)

    # scored on the records the student held out for validation
    with stage("fidelity"):
        held_out = validation_indices(len(data), run_config.student.val_fraction, run_config.student.seed)
        roc, spearman = compare_roc(data.with_vectors(targets).subset(held_out),
                                    data.with_vectors(statistics.mu_hat).subset(held_out),
                                    pair_count=run_config.general.eval_pairs, seed=run_config.general.seed)

    payload = {
        "reports": [r.to_dict() for r in out.reports],
        "num_records": len(data),
        "num_classes": len(out.classes),
        "dropped_classes": out.dropped_classes,
        "canonical_class_id": out.canonical.class_id,
        "projection": projection_history,
        "student": student_history,
        "fidelity": {"spearman": spearman, "held_out_records": len(held_out), "roc": roc.to_dict(orient="records")},
        "seeds": {section: value["seed"] for section, value in config_container(config).items()
                  if isinstance(value, dict) and "seed" in value},
    }
    if ground_truth is not None:
        cap = run_config.capacity
        with stage("oracle"):
            oracle = oracle_sweep(ground_truth, sorted(cap.fars), cap.population_fraction, cap.selector, cap.param,
                                  shannon_pairing=cap.shannon_pairing)
        payload["oracle"] = [r.to_dict() for r in oracle]
    write_report(payload, os.path.join(out_dir, REPORT_FILE), config)

    if run_config.general.plot:
        plot_sweep(frame, save_name=os.path.join(out_dir, "sweep"))
    for report in out.reports:
        logger.info(f"FAR {report.far:g}: log10 capacity {report.log10_capacity:.4f} (r_y {report.r_y:.4f}, r_z {report.r_z:.4f})")
    logger.info(f"Teacher/student score Spearman {spearman:.4f}. Reports in {out_dir}")


if __name__ == "__main__":
    args = parse_args()
    sys.exit(run_main(main, args))
