import dataclasses

import pytest

from centroida.config import (
    CsvSpec,
    ExperimentConfig,
    SyntheticSpec,
    validate_config,
)


def test_defaults_validate_clean():
    assert validate_config(ExperimentConfig()) == []


def test_dict_round_trip_preserves_everything():
    cfg = ExperimentConfig(
        synthetic=SyntheticSpec(k=7, translation=[1.0, -2.0]),
        p_target=0.05,
        target_order="reversed",
        seeds=[3, 4],
        variant="rm_resample",
    )
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back == cfg


def test_json_round_trip(tmp_path):
    cfg = ExperimentConfig(p_source=0.2, epochs=7)
    path = tmp_path / "cfg.json"
    cfg.write_json(path)
    assert ExperimentConfig.from_json(path) == cfg


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"learning_rate": 0.1})


def test_hash_is_stable_and_sensitive():
    a = ExperimentConfig()
    b = ExperimentConfig()
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 64
    c = dataclasses.replace(a, p_target=0.5)
    assert c.config_hash() != a.config_hash()


@pytest.mark.parametrize(
    "overrides,needle",
    [
        (dict(synthetic=None, csv=None), "exactly one"),
        (dict(p_source=0.0), "p_source"),
        (dict(p_target=1.5), "p_target"),
        (dict(source_order="random"), "source_order"),
        (dict(variant="extra"), "variant"),
        (dict(gamma_form="linear"), "gamma_form"),
        (dict(source_centroid_labels="oracle"), "source_centroid_labels"),
        (dict(lambda_c=-1.0), "lambda_c"),
        (dict(temperature=0.0), "temperature"),
        (dict(batch_size=0), "batch_size"),
        (dict(epochs=0), "epochs"),
        (dict(lr0=0.0), "lr0"),
        (dict(momentum=1.0), "momentum"),
        (dict(hidden_dim=0), "hidden_dim"),
        (dict(seeds=[]), "seeds"),
        (dict(synthetic=SyntheticSpec(k=1)), "synthetic.k"),
        (dict(synthetic=SyntheticSpec(noise_sigma=0.0)), "noise_sigma"),
        (dict(synthetic=SyntheticSpec(scale=0.0)), "scale"),
        (dict(synthetic=SyntheticSpec(source_tail_p=0.0)), "source_tail_p"),
    ],
)
def test_validation_flags_each_problem(overrides, needle):
    problems = validate_config(ExperimentConfig(**overrides))
    assert any(needle in p for p in problems), problems


def test_csv_mode_checks_paths_and_classes(tmp_path):
    csv = CsvSpec(
        source_train=str(tmp_path / "s.csv"),
        target_train=str(tmp_path / "t.csv"),
        target_test=str(tmp_path / "e.csv"),
    )
    cfg = ExperimentConfig(synthetic=None, csv=csv, n_classes=None)
    problems = validate_config(cfg)
    assert any("n_classes" in p for p in problems)
    assert sum("file not found" in p for p in problems) == 3
    for name in ("s.csv", "t.csv", "e.csv"):
        (tmp_path / name).write_text("f0,label\n0.0,0\n")
    cfg = ExperimentConfig(synthetic=None, csv=csv, n_classes=2)
    assert validate_config(cfg) == []
