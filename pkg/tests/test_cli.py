import json
import os

import numpy as np
import pytest

import estimate_capacity
import toy_experiment
from models.mlp import MlpNetwork
from utils.cli_utils import (collect_overrides, config_container, resolve_config, run_main, stage, to_run_config,
                             write_report)
from utils.errors import InsufficientSamples, NumericalError, ValidationError
from utils.general_utils import instantiate_from_config
from utils.stats_utils import GaussianModel, Parameterization, chi2_cdf, ellipsoid_log_volume

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


class TestResolveConfig:

    def test_defaults(self):
        run = to_run_config(resolve_config())
        assert run.capacity.fars == [0.01]
        assert run.capacity.population_fraction == 0.99
        assert run.inference.mc_passes == 1000
        assert run.student.learning_rate == 1e-3
        assert run.projector.learning_rate == 3e-4
        assert run.projector_arch.method == "mlp"

    def test_yaml_and_overrides(self):
        path = os.path.join(CONFIG_DIR, "capacity_fast_config.yaml")
        run = to_run_config(resolve_config(path))
        assert run.inference.mc_passes == 50
        assert run.capacity.fars == [1e-3, 1e-2]
        assert run.student_arch.hidden_sizes == [64, 64]

        # section seeds follow general.seed through interpolation
        run = to_run_config(resolve_config(path, {"general.seed": 5}, ["inference.mc_passes=7"]))
        assert run.projector.seed == run.student.seed == run.inference.seed == 5
        assert run.inference.mc_passes == 7

    def test_dotlist_wins_over_overrides(self):
        run = to_run_config(resolve_config(None, {"capacity.selector": "min"}, ["capacity.selector=median"]))
        assert run.capacity.selector == "median"

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            resolve_config(str(tmp_path / "none.yaml"))

    @pytest.mark.parametrize("dotlist", [["capacity.nope=1"], ["capacity.min_samples=many"]])
    def test_invalid_keys_and_types(self, dotlist):
        with pytest.raises(ValidationError) as info:
            resolve_config(dotlist=dotlist)
        assert str(info.value).startswith("[config]")

    def test_invalid_values(self):
        config = resolve_config(dotlist=["capacity.selector=mode"])
        with pytest.raises(ValidationError) as info:
            to_run_config(config)
        assert info.value.exit_code == 2
        assert info.value.stage == "config"

    def test_loss_params_follow_overrides(self):
        config = config_container(resolve_config(None, {"projector.reg_lambda": 0.5, "loss_weights.lambda_": 0.2}))
        projector_loss = instantiate_from_config(config["projector_loss"])
        assert projector_loss.reg_lambda == 0.5
        assert projector_loss.convention == "one_minus_cos"
        student_loss = instantiate_from_config(config["student_loss"])
        assert student_loss.lambda_ == 0.2
        assert student_loss.population_target == "teacher"


class TestOverrides:

    def test_flags(self):
        args = estimate_capacity.parse_args(["--seed", "9", "--epochs", "3", "--far", "1e-3,1e-2", "--far", "0.1",
                                             "--lambda", "0.2", "--reg-lambda", "0.01"])
        overrides = collect_overrides(args)
        assert overrides["projector.epochs"] == overrides["student.epochs"] == 3
        assert overrides["capacity.fars"] == [1e-3, 1e-2, 0.1]
        assert overrides["loss_weights.lambda_"] == 0.2
        assert overrides["projector.reg_lambda"] == 0.01
        assert "inference.mc_passes" not in overrides

        run = to_run_config(resolve_config(None, overrides))
        assert run.general.seed == 9
        assert run.projector.seed == run.student.seed == run.inference.seed == run.synth.seed == run.toy.seed == 9

    def test_no_flags(self):
        assert collect_overrides(estimate_capacity.parse_args([])) == {}


class TestRunMain:

    @pytest.mark.parametrize("error, code", [
        (None, 0),
        (ValidationError("bad input"), 2),
        (InsufficientSamples("too few"), 2),
        (NumericalError("not finite"), 3),
        (FileNotFoundError("missing"), 2),
    ])
    def test_exit_codes(self, error, code):
        def main(args):
            if error is not None:
                raise error
        assert run_main(main, None) == code

    @pytest.mark.parametrize("call", [
        lambda: chi2_cdf(1.0, 0),
        lambda: ellipsoid_log_volume(GaussianModel(np.zeros(2), np.eye(2)), 0.0),
        lambda: MlpNetwork(layer_sizes=[4]),
        lambda: Parameterization.parse("cube"),
    ])
    def test_library_checks_exit_with_validation_code(self, call):
        def main(args):
            call()
        assert run_main(main, None) == 2

    def test_other_errors_propagate(self):
        def main(args):
            raise KeyError("bug")
        with pytest.raises(KeyError):
            run_main(main, None)

    def test_stage_tagging(self):
        with pytest.raises(InsufficientSamples) as info:
            with stage("data"):
                raise InsufficientSamples("too few")
        assert str(info.value) == "[data] too few"

        with pytest.raises(NumericalError) as info:
            with stage("capacity"):
                with stage("student"):
                    raise NumericalError("not finite")
        assert info.value.stage == "student"

    def test_write_report(self, tmp_path):
        path = write_report({"value": 1.5}, str(tmp_path / "sub" / "report.json"), resolve_config())
        with open(path, encoding="utf-8") as f:
            report = json.load(f)
        assert report["value"] == 1.5
        assert report["config"]["capacity"]["fars"] == [0.01]
        assert report["config"]["projector_loss"]["params"]["reg_lambda"] == 3e-4


class TestToyExperiment:

    def test_report_is_deterministic(self, capsys, tmp_path):
        argv = ["--classes", "6", "--samples-per-class", "30", "--out-dir", str(tmp_path)]
        assert run_main(toy_experiment.main, toy_experiment.parse_args(argv)) == 0
        first = capsys.readouterr().out
        assert run_main(toy_experiment.main, toy_experiment.parse_args(argv)) == 0
        assert capsys.readouterr().out == first
        assert "ground truth" in first and "convex hull" in first

        with open(tmp_path / "toy_report.json", encoding="utf-8") as f:
            report = json.load(f)
        assert report["far"] == 0.01
        assert report["config"]["toy"]["n_classes"] == 6
        assert os.path.isfile(tmp_path / "run_config.yaml")

    def test_single_class_is_rejected(self):
        assert run_main(toy_experiment.main, toy_experiment.parse_args(["--classes", "1"])) == 2

    def test_invalid_far(self):
        assert run_main(toy_experiment.main, toy_experiment.parse_args(["--classes", "4", "--far", "1.5"])) == 2
