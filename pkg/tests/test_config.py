"""Tests for config parsing, unit-suffix conversion, and validation."""

import math
import textwrap

import pytest

from ionlab.config import (
    EXPERIMENTS,
    RunConfig,
    convert_units,
    load_config,
    prepare_parameters,
)
from ionlab.detection import DetectionParams
from ionlab.efficiency import EfficiencyBudget
from ionlab.errors import ConfigError


def _write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


DETECT_MODEL_YAML = """
    schema_version: 1
    experiment: detect-model
    seed: 42
    output_dir: out
    parameters:
      n_bar_B: 25.37
      n_bar_D: 0.18
      t_det_us: 50
      t_delay_us: 20
      tau_s: 1.0
      threshold: 5
"""


class TestUnitConversion:
    def test_time_suffixes(self):
        out = convert_units({"t_det_us": 50, "t_delay_ms": 2, "tau_s": 1.5})
        assert out == {
            "t_det": pytest.approx(50e-6),
            "t_delay": pytest.approx(2e-3),
            "tau": 1.5,
        }

    def test_frequency_suffixes(self):
        out = convert_units({"sigma_hz": 5.6, "cutoff_khz": 2, "rabi_mhz": 0.5})
        assert out == {
            "sigma": 5.6,
            "cutoff": pytest.approx(2000.0),
            "rabi": pytest.approx(500000.0),
        }

    def test_displacement_suffix_is_native_scale(self):
        assert convert_units({"amplitude_nm": 10.76}) == {"amplitude": 10.76}

    def test_nested_structures(self):
        out = convert_units(
            {
                "noise": {"ou": [{"sigma_hz": 3.1, "tau_c_s": 1.0}]},
                "tones": [{"frequency_hz": 1.2, "amplitude_nm": 10.76}],
            }
        )
        assert out["noise"]["ou"][0] == {"sigma": 3.1, "tau_c": 1.0}
        assert out["tones"][0] == {"frequency": 1.2, "amplitude": 10.76}

    def test_list_values_convert_elementwise(self):
        out = convert_units({"delays_ms": [4, 8, 12]})
        assert out["delays"] == pytest.approx([4e-3, 8e-3, 12e-3])

    def test_unsuffixed_keys_pass_through(self):
        out = convert_units({"n_bar_B": 25.37, "threshold": 5, "kind": "xy4"})
        assert out == {"n_bar_B": 25.37, "threshold": 5, "kind": "xy4"}

    def test_collision_between_suffixed_and_plain_key(self):
        with pytest.raises(ConfigError):
            convert_units({"t_det": 1e-5, "t_det_us": 50})

    def test_non_numeric_suffixed_value_rejected(self):
        with pytest.raises(ConfigError):
            convert_units({"tau_s": "long"})


class TestLoadConfig:
    def test_valid_file(self, tmp_path):
        cfg = load_config(_write(tmp_path, DETECT_MODEL_YAML))
        assert isinstance(cfg, RunConfig)
        assert cfg.experiment == "detect-model"
        assert cfg.seed == 42
        assert cfg.output_dir.name == "out"
        assert cfg.parameters["t_det"] == pytest.approx(50e-6)
        assert cfg.parameters["n_bar_B"] == 25.37

    def test_experiment_names_closed_set(self):
        assert set(EXPERIMENTS) == {
            "detect-model",
            "detect-sim",
            "threshold-scan",
            "efficiency",
            "coherence-scan",
            "coherence-fit",
            "vibration-analyze",
            "vibration-synth",
        }

    def test_missing_schema_version(self, tmp_path):
        p = _write(tmp_path, "experiment: detect-model\nseed: 1\nparameters: {}\n")
        with pytest.raises(ConfigError, match="schema_version"):
            load_config(p)

    def test_wrong_schema_version(self, tmp_path):
        p = _write(
            tmp_path,
            "schema_version: 99\nexperiment: detect-model\nseed: 1\nparameters: {}\n",
        )
        with pytest.raises(ConfigError, match="schema_version"):
            load_config(p)

    def test_unknown_experiment(self, tmp_path):
        p = _write(
            tmp_path, "schema_version: 1\nexperiment: warp-drive\nseed: 1\nparameters: {}\n"
        )
        with pytest.raises(ConfigError, match="warp-drive"):
            load_config(p)

    def test_yaml_syntax_error_reports_line(self, tmp_path):
        p = _write(tmp_path, "schema_version: 1\nexperiment: [unclosed\n")
        with pytest.raises(ConfigError, match="line"):
            load_config(p)

    def test_non_mapping_document(self, tmp_path):
        p = _write(tmp_path, "- just\n- a\n- list\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_seed_override_wins(self, tmp_path):
        cfg = load_config(_write(tmp_path, DETECT_MODEL_YAML), seed_override=7)
        assert cfg.seed == 7

    def test_missing_seed_without_override(self, tmp_path):
        text = DETECT_MODEL_YAML.replace("    seed: 42\n", "")
        with pytest.raises(ConfigError, match="seed"):
            load_config(_write(tmp_path, text))

    def test_missing_seed_with_override_is_fine(self, tmp_path):
        text = DETECT_MODEL_YAML.replace("    seed: 42\n", "")
        cfg = load_config(_write(tmp_path, text), seed_override=9)
        assert cfg.seed == 9

    @pytest.mark.parametrize("bad", ["-1", "18446744073709551616", "1.5", "true"])
    def test_seed_must_be_u64(self, tmp_path, bad):
        text = DETECT_MODEL_YAML.replace("seed: 42", f"seed: {bad}")
        with pytest.raises(ConfigError, match="seed"):
            load_config(_write(tmp_path, text))

    def test_output_dir_override(self, tmp_path):
        cfg = load_config(
            _write(tmp_path, DETECT_MODEL_YAML), output_dir_override=tmp_path / "alt"
        )
        assert cfg.output_dir == tmp_path / "alt"

    def test_missing_output_dir_without_override(self, tmp_path):
        text = DETECT_MODEL_YAML.replace("    output_dir: out\n", "")
        with pytest.raises(ConfigError, match="output_dir"):
            load_config(_write(tmp_path, text))


class TestPrepareDetection:
    def test_detect_model_builds_params(self):
        params = {
            "n_bar_B": 25.37,
            "n_bar_D": 0.18,
            "t_det": 50e-6,
            "t_delay": 20e-6,
            "tau": 1.0,
            "threshold": 5,
        }
        prep = prepare_parameters("detect-model", params)
        assert isinstance(prep["params"], DetectionParams)
        assert prep["params"].t_det == pytest.approx(50e-6)
        assert prep["threshold"] == 5

    def test_missing_key_is_named(self):
        with pytest.raises(ConfigError, match="n_bar_B") as info:
            prepare_parameters("detect-model", {"n_bar_D": 0.18})
        assert info.value.key == "n_bar_B"

    def test_module_invariant_violation_is_config_error(self):
        params = {
            "n_bar_B": 0.18,
            "n_bar_D": 25.37,
            "t_det": 50e-6,
            "t_delay": 20e-6,
            "tau": 1.0,
            "threshold": 5,
        }
        with pytest.raises(ConfigError):
            prepare_parameters("detect-model", params)

    def test_threshold_must_be_integer(self):
        params = {
            "n_bar_B": 25.37,
            "n_bar_D": 0.18,
            "t_det": 50e-6,
            "t_delay": 20e-6,
            "tau": 1.0,
            "threshold": 5.5,
        }
        with pytest.raises(ConfigError, match="threshold"):
            prepare_parameters("detect-model", params)

    def test_detect_sim_requires_trials(self):
        base = {
            "n_bar_B": 25.37,
            "n_bar_D": 0.18,
            "t_det": 50e-6,
            "t_delay": 20e-6,
            "tau": 1.0,
            "threshold": 5,
        }
        with pytest.raises(ConfigError, match="trials"):
            prepare_parameters("detect-sim", base)
        prep = prepare_parameters("detect-sim", {**base, "trials": 1000})
        assert prep["trials"] == 1000

    def test_unknown_parameter_rejected(self):
        params = {
            "n_bar_B": 25.37,
            "n_bar_D": 0.18,
            "t_det": 50e-6,
            "t_delay": 20e-6,
            "tau": 1.0,
            "threshold": 5,
            "typo_key": 3,
        }
        with pytest.raises(ConfigError, match="typo_key"):
            prepare_parameters("detect-model", params)


class TestPrepareCoherence:
    BASE = {
        "kind": "ramsey",
        "delays": [0.004, 0.008, 0.012],
        "trials": 1000,
        "pi_time": 0.0,
        "noise": {"quasi_static_sigma": 6.63},
    }

    def test_minimal_scan(self):
        prep = prepare_parameters("coherence-scan", dict(self.BASE))
        assert prep["kind"] == "ramsey"
        assert prep["model"].variant == "quasi_static_gaussian"
        assert prep["model"].sigma == 6.63
        assert prep["pulse_errors"].is_zero
        assert prep["cycles"] is None

    def test_composite_noise(self):
        params = dict(self.BASE)
        params["noise"] = {
            "quasi_static_sigma": 5.6,
            "ou": [{"sigma": 3.1, "tau_c": 1.0}],
        }
        prep = prepare_parameters("coherence-scan", params)
        model = prep["model"]
        assert model.variant == "composite"
        assert len(model.parts) == 2
        variants = {p.variant for p in model.parts}
        assert variants == {"quasi_static_gaussian", "ornstein_uhlenbeck"}

    def test_delay_grid_spec(self):
        params = dict(self.BASE)
        params["delays"] = {"start": 0.004, "stop": 0.048, "count": 12}
        prep = prepare_parameters("coherence-scan", params)
        assert len(prep["delays"]) == 12
        assert prep["delays"][0] == pytest.approx(0.004)
        assert prep["delays"][-1] == pytest.approx(0.048)

    def test_log_grid_spec(self):
        params = dict(self.BASE)
        params["delays"] = {
            "start": 0.01,
            "stop": 1.0,
            "count": 5,
            "spacing": "log",
        }
        prep = prepare_parameters("coherence-scan", params)
        ratios = [b / a for a, b in zip(prep["delays"], prep["delays"][1:])]
        assert ratios == pytest.approx([ratios[0]] * 4)

    def test_empty_noise_rejected(self):
        params = dict(self.BASE)
        params["noise"] = {}
        with pytest.raises(ConfigError, match="noise"):
            prepare_parameters("coherence-scan", params)

    def test_pulse_error_keys(self):
        params = dict(self.BASE)
        params["pi_time"] = 40e-6
        params["amplitude_error"] = 0.03
        params["detuning_offset"] = 500.0
        prep = prepare_parameters("coherence-scan", params)
        assert prep["pulse_errors"].amplitude_error == 0.03
        assert prep["pulse_errors"].detuning_offset == 500.0

    def test_cycles_passthrough(self):
        params = dict(self.BASE)
        params["kind"] = "xyn"
        params["cycles"] = 3
        prep = prepare_parameters("coherence-scan", params)
        assert prep["cycles"] == 3


class TestPrepareOthers:
    def test_efficiency_explicit_budget(self):
        prep = prepare_parameters(
            "efficiency",
            {
                "na": 0.6,
                "stages": [{"name": "objective", "transmission": 0.917}],
                "measured": {"detections": 1770, "trials": 100000},
            },
        )
        assert isinstance(prep["budget"], EfficiencyBudget)
        assert prep["budget"].stages[0].name == "objective"
        assert prep["measured"] == (1770, 100000)

    def test_efficiency_reference_budget(self):
        prep = prepare_parameters("efficiency", {"use_reference": True})
        assert prep["budget"].na == 0.6
        assert prep["measured"] is None

    def test_vibration_synth(self):
        prep = prepare_parameters(
            "vibration-synth",
            {
                "duration": 20.0,
                "sample_rate": 1000.0,
                "tones": [{"frequency": 1.2, "amplitude": 10.76}],
                "drift": 0.5,
                "noise_rms": 0.1,
            },
        )
        assert prep["tones"] == [(1.2, 10.76, 0.0)]
        assert prep["drift"] == 0.5

    def test_vibration_analyze_defaults(self):
        prep = prepare_parameters(
            "vibration-analyze", {"input_timeseries": "ts.csv"}
        )
        assert prep["cutoff"] == pytest.approx(0.03)
        assert prep["fundamental"] is None
        assert math.isfinite(prep["min_peak_amplitude"])

    def test_coherence_fit_requires_input(self):
        with pytest.raises(ConfigError, match="input_curve"):
            prepare_parameters("coherence-fit", {})
