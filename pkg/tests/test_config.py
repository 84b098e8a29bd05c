import pytest

from egsde.config import (ConfigError, ExperimentConfig, dump_config,
                          load_config, parse_config)

MINIMAL = """
[dataset]
kind = points2d
seed = 3

[translation]
lambda_s = 100
lambda_i = 1.5
steps = 50

[experiment]
repeat_seeds = 0,1,2
"""


def test_parse_minimal_with_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.dataset.kind == "points2d"
    assert cfg.dataset.seed == 3
    assert cfg.dataset.num_domains == 2          # default
    assert cfg.translation.lambda_s == 100.0
    assert cfg.translation.lambda_i == 1.5
    assert cfg.translation.m_frac == 0.5         # default
    assert cfg.repeat_seeds == (0, 1, 2)
    assert cfg.score_source == "analytic"


def test_unknown_key_is_an_error():
    bad = MINIMAL + "\n[metrics]\nfeature_spacee = raw\n"
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_config(bad)


def test_unknown_section_is_an_error():
    bad = MINIMAL + "\n[metricss]\nfeature_space = raw\n"
    with pytest.raises(ConfigError, match="unknown sections"):
        parse_config(bad)


def test_bad_value_reports_section_and_key():
    bad = MINIMAL.replace("steps = 50", "steps = fifty")
    with pytest.raises(ConfigError, match=r"\[translation\] steps"):
        parse_config(bad)


def test_checkpoint_source_requires_path():
    bad = MINIMAL + "\n[score]\nsource = checkpoint\n"
    with pytest.raises(ConfigError, match="checkpoint"):
        parse_config(bad)


def test_invalid_sampler_rejected():
    bad = MINIMAL + "\nsampler = nonsense\n"
    # the stray key lands in [experiment], which rejects it
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_round_trip_through_dump():
    cfg = parse_config(MINIMAL)
    again = parse_config(dump_config(cfg))
    assert again == cfg


def test_load_config_from_file(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(MINIMAL)
    cfg = load_config(path)
    assert cfg.translation.steps == 50


def test_sweep_values():
    cfg = parse_config(MINIMAL)
    swept = cfg.with_sweep_value("lambda_i", "2.5")
    assert swept.translation.lambda_i == 2.5
    assert cfg.translation.lambda_i == 1.5  # original untouched
    k = cfg.with_sweep_value("K", "3")
    assert k.translation.k_repeats == 3
    flag = cfg.with_sweep_value("noise_free", "true")
    assert flag.translation.noise_free is True
    with pytest.raises(ConfigError):
        cfg.with_sweep_value("seed", "1")


def test_empty_repeat_seeds_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig(repeat_seeds=())


def test_comments_and_inline_comments():
    text = MINIMAL + "\n[metrics]\nfeature_space = raw ; realism in data space\n"
    cfg = parse_config(text)
    assert cfg.feature_space == "raw"
