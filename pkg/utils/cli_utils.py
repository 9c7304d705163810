import contextlib
import logging as py_logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from accelerate import Accelerator
from accelerate.utils import set_seed
from diffusers.utils import logging
from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from dataloader.synthetic import SyntheticTeacherSpec, ToySpec
from pipelines.pipeline_capacity import CapacityConfig, InferenceConfig
from trainers.train_config import StudentLossWeights, StudentTrainConfig, TrainConfig
from utils.errors import RepCapError, ValidationError, tag_stage
from utils.general_utils import flatten_and_filter_config, set_num_threads_from_env, write_json

logger = logging.get_logger(__name__)  # pylint: disable=invalid-name

PROJECTION_METHODS = ("mlp", "pca", "none")
SEEDED_SECTIONS = ("projector", "student", "inference", "synth", "toy")


@dataclass
class ProjectorArch:
    proj_dim: int = 8
    width: int = 512
    num_blocks: int = 2
    method: str = "mlp"  # 'mlp', 'pca' or 'none' (student trained on the raw embeddings)

    def __post_init__(self):
        if self.method not in PROJECTION_METHODS:
            raise ValidationError(f"Projection method must be one of {PROJECTION_METHODS}, got {self.method}.")
        if self.proj_dim < 1:
            raise ValidationError(f"proj_dim must be positive, got {self.proj_dim}.")


@dataclass
class StudentArch:
    hidden_sizes: List[int] = field(default_factory=lambda: [512, 512, 512])
    dropout_rate: float = 0.2


@dataclass
class GeneralConfig:
    seed: int = 0
    out_dir: str = "runs/capacity"
    input: Optional[str] = None
    synth: Optional[str] = None
    reuse: bool = False
    plot: bool = False
    eval_pairs: int = 10000


@dataclass
class RunConfig:
    general: GeneralConfig = field(default_factory=GeneralConfig)
    projector: TrainConfig = field(default_factory=TrainConfig)
    projector_arch: ProjectorArch = field(default_factory=ProjectorArch)
    student: StudentTrainConfig = field(default_factory=StudentTrainConfig)
    student_arch: StudentArch = field(default_factory=StudentArch)
    loss_weights: StudentLossWeights = field(default_factory=StudentLossWeights)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    capacity: CapacityConfig = field(default_factory=CapacityConfig)
    synth: SyntheticTeacherSpec = field(default_factory=SyntheticTeacherSpec)
    toy: ToySpec = field(default_factory=ToySpec)
    projector_loss: Dict[str, Any] = field(default_factory=lambda: {
        "target": "losses.loss.MDSLoss",
        "params": {"reg_lambda": "${projector.reg_lambda}", "convention": "${projector.distance}"},
    })
    student_loss: Dict[str, Any] = field(default_factory=lambda: {
        "target": "losses.loss.StudentLoss",
        "params": {
            "lambda_": "${loss_weights.lambda_}",
            "gamma": "${loss_weights.gamma}",
            "delta": "${loss_weights.delta}",
            "population_target": "${loss_weights.population_target}",
        },
    })


# argparse destination -> config keys it overrides
OVERRIDES = {
    "input": ["general.input"],
    "synth": ["general.synth"],
    "out_dir": ["general.out_dir"],
    "reuse": ["general.reuse"],
    "plot": ["general.plot"],
    "eval_pairs": ["general.eval_pairs"],
    "proj_dim": ["projector_arch.proj_dim"],
    "epochs": ["projector.epochs", "student.epochs"],
    "lr": ["projector.learning_rate", "student.learning_rate"],
    "reg_lambda": ["projector.reg_lambda"],
    "lambda_": ["loss_weights.lambda_"],
    "gamma": ["loss_weights.gamma"],
    "delta": ["loss_weights.delta"],
    "mc_passes": ["inference.mc_passes"],
    "far": ["capacity.fars"],
    "population_fraction": ["capacity.population_fraction"],
    "shannon_pairing": ["capacity.shannon_pairing"],
    "selector": ["capacity.selector"],
    "param": ["capacity.param"],
    "min_samples": ["capacity.min_samples"],
    "class_spread": ["capacity.class_spread"],
    "classes": ["toy.n_classes"],
    "samples_per_class": ["toy.samples_per_class"],
}


def parse_list_float(value):
    try:
        return [float(x) for x in value.split(',')]
    except ValueError:
        return [float(value)]


def parse_list_int(value):
    try:
        return [int(x) for x in value.split(',')]
    except ValueError:
        return [int(value)]


def add_config_args(parser):
    parser.add_argument('--config', type=str, default=None, help="Path to the YAML configuration file.")
    parser.add_argument('--set', dest="dotlist", action="append", default=[], metavar="KEY=VALUE",
                        help="Override any config value, e.g. --set student.optimizer=sgd. Repeatable.")
    parser.add_argument('--seed', type=int, default=None, help="Seed for every stage.")
    parser.add_argument('--out-dir', dest="out_dir", type=str, default=None, help="Directory for reports and caches.")


def add_capacity_args(parser):
    parser.add_argument('--far', type=parse_list_float, action="extend", default=None,
                        help="False accept rate(s), repeatable or comma-separated.")
    parser.add_argument('--population-fraction', dest="population_fraction", type=float, default=None,
                        help="Fraction of the population enclosed by r_y (default 0.99).")
    parser.add_argument('--shannon-pairing', dest="shannon_pairing", action="store_true", default=None,
                        help="Use r_y = r_z, i.e. population fraction 1 - FAR.")
    parser.add_argument('--selector', type=str, choices=["min", "mean", "median", "max"], default=None)
    parser.add_argument('--param', type=str, choices=["sphere", "axis", "full"], default=None)
    parser.add_argument('--min-samples', dest="min_samples", type=int, default=None,
                        help="Classes with fewer records are dropped.")
    parser.add_argument('--class-spread', dest="class_spread", type=str, choices=["uncertainty", "total"], default=None,
                        help="'total' adds the scatter of member means to the class covariance.")


def collect_overrides(args) -> Dict[str, Any]:
    overrides = {}
    for dest, keys in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        for key in keys:
            overrides[key] = value
    seed = getattr(args, "seed", None)
    if seed is not None:
        overrides["general.seed"] = seed
        for section in SEEDED_SECTIONS:
            overrides[f"{section}.seed"] = seed
    return overrides


def resolve_config(config_path=None, overrides: Optional[Dict[str, Any]] = None, dotlist: Optional[List[str]] = None):
    '''
    Schema <- YAML file <- flag overrides <- --set dotlist. Returns the merged DictConfig.
    '''
    try:
        layers = [OmegaConf.structured(RunConfig)]
        if config_path is not None:
            if not os.path.isfile(config_path):
                raise FileNotFoundError(f"Config file not found: {config_path}")
            layers.append(OmegaConf.load(config_path))
        config = OmegaConf.merge(*layers)
        for key, value in (overrides or {}).items():
            OmegaConf.update(config, key, value, merge=False)
        if dotlist:
            config = OmegaConf.merge(config, OmegaConf.from_dotlist(list(dotlist)))
    except OmegaConfBaseException as err:
        raise ValidationError(f"Invalid configuration: {err}", stage="config") from err
    return config


def to_run_config(config) -> RunConfig:
    try:
        run_config = OmegaConf.to_object(config)
    except OmegaConfBaseException as err:
        raise ValidationError(f"Invalid configuration: {err}", stage="config") from err
    except RepCapError as err:
        raise tag_stage(err, "config")
    return run_config


def config_container(config):
    return OmegaConf.to_container(config, resolve=True)


def setup_run(seed):
    py_logging.basicConfig(
        format="%(asctime)s - %(levelname)s - %(name)s - %(message)s",
        datefmt="%m/%d/%Y %H:%M:%S",
        level=py_logging.INFO,
    )
    accelerator = Accelerator(cpu=True)
    set_seed(seed)
    set_num_threads_from_env()
    return accelerator


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except RepCapError as err:
        tag_stage(err, name)
        raise


def save_run_config(config, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "run_config.yaml")
    OmegaConf.save(config, path, resolve=True)
    logger.debug(f"Resolved config: {flatten_and_filter_config(config_container(config))}")
    return path


def write_report(payload: Dict[str, Any], path, config=None):
    '''JSON report; the resolved config is embedded under "config".'''
    report = dict(payload)
    if config is not None:
        report["config"] = config_container(config)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    write_json(report, path)
    return path


def run_main(main, args):
    '''Exit code of main(args): 0 on success, the error's code on a RepCapError, 2 for missing files.'''
    try:
        main(args)
    except RepCapError as err:
        logger.error(str(err))
        return err.exit_code
    except FileNotFoundError as err:
        logger.error(str(err))
        return 2
    return 0
