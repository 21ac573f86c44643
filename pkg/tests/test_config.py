import json
import tempfile
from pathlib import Path

import pytest

from tandist.config import ExperimentConfig
from tandist.exceptions import ConfigurationError
from tandist.transforms import TransformKind


def test_defaults() -> None:
    config = ExperimentConfig.load()
    assert config.model.kind == "Translation2D"
    assert config.noise_levels == [0.0]
    assert config.schedule.kind == "geometric"
    assert config.out_dir == Path("tandist-out")
    assert config.build_model().kind is TransformKind.TRANSLATION_2D


def test_load_json() -> None:
    with tempfile.TemporaryDirectory() as tempdir:
        path = Path(tempdir) / "config.json"
        path.write_text(
            json.dumps(
                {
                    "model": {"kind": "TransRot3D"},
                    "noise_levels": [0, 0.1],
                    "rhos": [0.0, 2.0],
                    "schedule": {"kind": "fixed", "rhos": [2, 1, 0]},
                    "transform_range": {"theta": [-0.2, 0.2]},
                }
            )
        )
        config = ExperimentConfig.load(path)

    assert config.build_model().dim == 3
    assert config.noise_levels == [0.0, 0.1]
    assert config.schedule.rhos == [2.0, 1.0, 0.0]
    assert config.sampling_range()["theta"] == (-0.2, 0.2)
    assert config.sampling_range()["tx"] == (-0.4, 0.4)


def test_load_toml() -> None:
    with tempfile.TemporaryDirectory() as tempdir:
        path = Path(tempdir) / "config.toml"
        path.write_text(
            "trials = 5\n"
            "rhos = [0.0, 4.0]\n"
            "\n"
            "[model]\n"
            'kind = "TransRotScale4D"\n'
            "\n"
            "[schedule]\n"
            "rho1 = 8.0\n"
            "alpha = 0.5\n"
        )
        config = ExperimentConfig.load(path)

    assert config.trials == 5
    assert config.build_model().has_scale
    assert config.schedule.rho1 == 8.0
    assert config.schedule.alpha == 0.5


def test_load_ini() -> None:
    with tempfile.TemporaryDirectory() as tempdir:
        path = Path(tempdir) / "config.ini"
        path.write_text("[experiment]\ntrials = 3\nnoise_levels = [0.2]\n\n[model]\nkind = TransRot3D\n")
        config = ExperimentConfig.load(path)

    assert config.trials == 3
    assert config.noise_levels == [0.2]
    assert config.model.kind == "TransRot3D"


def test_command_line_overrides() -> None:
    config = ExperimentConfig.load(
        seed=7,
        out="results",
        threads=4,
        sets=["schedule.alpha=0.25", "model.kind=TransRot3D", "rhos=[0, 1, 2]"],
    )
    assert config.seed == 7
    assert config.out_dir == Path("results")
    assert config.threads == 4
    assert config.schedule.alpha == 0.25
    assert config.model.kind == "TransRot3D"
    assert config.rhos == [0.0, 1.0, 2.0]


@pytest.mark.parametrize(
    "assignment, field",
    [
        ("model.kind=Affine6D", "model.kind"),
        ("schedule.alpha=1.5", "schedule.alpha"),
        ("schedule.kind=spiral", "schedule.kind"),
        ("noise_levels=[-0.1]", "noise_levels"),
        ("rhos=[]", "rhos"),
        ("trials=0", "trials"),
        ("trials=1.5", "trials"),
        ("threads=0", "threads"),
        ("target=[0.1]", "target"),
        ("transform_range.scale=[0, 1]", "transform_range.scale"),
        ("schedule.bruteforce=maybe", "schedule.bruteforce"),
        ('rhos="wide"', "rhos"),
    ],
)
def test_invalid_values_are_named(assignment: str, field: str) -> None:
    with pytest.raises(ConfigurationError) as excinfo:
        ExperimentConfig.load(sets=[assignment])
    assert f"Invalid value for {field}" in str(excinfo.value)


def test_unknown_field_is_rejected() -> None:
    with pytest.raises(ConfigurationError) as excinfo:
        ExperimentConfig.load(sets=["schedule.gamma=0.5"])
    assert "schedule.gamma" in str(excinfo.value)


def test_fixed_schedule_needs_radii() -> None:
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(sets=["schedule.kind=fixed"])


def test_malformed_assignment_is_rejected() -> None:
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(sets=["alpha"])


def test_missing_and_unsupported_files() -> None:
    with tempfile.TemporaryDirectory() as tempdir:
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(Path(tempdir) / "missing.json")

        path = Path(tempdir) / "config.yaml"
        path.write_text("trials: 3\n")
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(path)

        broken = Path(tempdir) / "broken.json"
        broken.write_text("{")
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(broken)


def test_config_hash_tracks_content() -> None:
    first = ExperimentConfig.load()
    second = ExperimentConfig.load()
    assert first.config_hash() == second.config_hash()
    assert first.config_hash() != ExperimentConfig.load(seed=1).config_hash()
    assert first.preamble() == {"config_hash": first.config_hash(), "seed": 0}


def test_config_hash_ignores_run_only_fields() -> None:
    first = ExperimentConfig.load(out="a", threads=1)
    second = ExperimentConfig.load(out="b", threads=4)
    assert first.config_hash() == second.config_hash()
