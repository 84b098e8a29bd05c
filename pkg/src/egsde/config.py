"""Experiment configuration: INI-style `key = value` sections validated
against a complete schema. Unknown sections or keys are hard errors, silent
typos in sweep tooling being worse than loud ones.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace

from .datasets import ToyDomainSpec
from .samplers import TranslationConfig


class ConfigError(ValueError):
    pass


_REQUIRED = object()


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_int_list(s):
    return [int(tok) for tok in s.split(",") if tok.strip() != ""]


def _parse_opt_int(s):
    return None if s.strip() == "" else int(s)


def _parse_opt_str(s):
    return None if s.strip() == "" else s.strip()


_SCHEMA = {
    "dataset": {
        "kind": (str.strip, "points2d"),
        "num_domains": (int, 2),
        "samples_per_domain": (int, 400),
        "test_samples_per_domain": (int, 200),
        "seed": (int, 0),
    },
    "score": {
        "source": (str.strip, "analytic"),
        "checkpoint": (_parse_opt_str, None),
    },
    "classifier": {
        "checkpoint": (_parse_opt_str, None),
    },
    "translation": {
        "sampler": (str.strip, "egsde_em"),
        "lambda_s": (float, 500.0),
        "lambda_i": (float, 2.0),
        "m_frac": (float, 0.5),
        "steps": (int, 500),
        "k_repeats": (int, 1),
        "mc_samples": (int, 1),
        "noise_free": (_parse_bool, False),
        "sim_s": (str.strip, "cosine"),
        "sim_i": (str.strip, "neg_sq_l2"),
        "filter_factor": (int, 1),
        "range_t": (int, 20),
        "guidance_class": (_parse_opt_int, None),
        "guidance_lambda": (float, 0.0),
    },
    "metrics": {
        "feature_space": (str.strip, "raw"),
        "value_scale": (float, 1.0),
    },
    "experiment": {
        "source_domain": (int, 0),
        "target_domain": (int, 1),
        "eval_samples": (int, 200),
        "repeat_seeds": (_parse_int_list, [0, 1, 2, 3, 4]),
    },
}

SWEEPABLE = {
    "lambda_s": float,
    "lambda_i": float,
    "m_frac": float,
    "k_repeats": int,
    "steps": int,
    "sim_s": str,
    "sim_i": str,
    "noise_free": _parse_bool,
    "mc_samples": int,
}
SWEEP_ALIASES = {"k": "k_repeats", "K": "k_repeats"}


@dataclass
class ExperimentConfig:
    dataset: ToyDomainSpec = field(default_factory=ToyDomainSpec)
    score_source: str = "analytic"
    score_checkpoint: str = None
    classifier_checkpoint: str = None
    translation: TranslationConfig = field(default_factory=TranslationConfig)
    feature_space: str = "raw"
    value_scale: float = 1.0
    source_domain: int = 0
    target_domain: int = 1
    eval_samples: int = 200
    repeat_seeds: tuple = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if self.score_source not in ("analytic", "checkpoint"):
            raise ConfigError(f"score source must be analytic|checkpoint, got {self.score_source!r}")
        if self.score_source == "checkpoint" and not self.score_checkpoint:
            raise ConfigError("score.source = checkpoint requires score.checkpoint")
        if self.feature_space not in ("raw", "classifier"):
            raise ConfigError(f"feature_space must be raw|classifier, got {self.feature_space!r}")
        if not self.repeat_seeds:
            raise ConfigError("repeat_seeds must list at least one seed")
        self.repeat_seeds = tuple(self.repeat_seeds)

    def with_sweep_value(self, param, raw_value):
        param = SWEEP_ALIASES.get(param, param)
        if param not in SWEEPABLE:
            raise ConfigError(
                f"cannot sweep {param!r}; choose from {sorted(SWEEPABLE)} (or K)"
            )
        value = SWEEPABLE[param](raw_value) if isinstance(raw_value, str) else raw_value
        return replace(self, translation=replace(self.translation, **{param: value}))


def _read_sections(text):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return parser


def parse_config(text):
    """Parse and validate INI text into an ExperimentConfig."""
    parser = _read_sections(text)
    unknown_sections = set(parser.sections()) - set(_SCHEMA)
    if unknown_sections:
        raise ConfigError(f"unknown sections: {sorted(unknown_sections)}")
    values = {}
    for section, keys in _SCHEMA.items():
        got = dict(parser.items(section)) if parser.has_section(section) else {}
        unknown = set(got) - set(keys)
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
        out = {}
        for key, (parse, default) in keys.items():
            if key in got:
                try:
                    out[key] = parse(got[key])
                except ConfigError:
                    raise
                except Exception as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from exc
            elif default is _REQUIRED:
                raise ConfigError(f"[{section}] missing required key {key}")
            else:
                out[key] = default
        values[section] = out

    ds = values["dataset"]
    tr = values["translation"]
    try:
        dataset = ToyDomainSpec(**ds)
        translation = TranslationConfig(**tr)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ex = values["experiment"]
    return ExperimentConfig(
        dataset=dataset,
        score_source=values["score"]["source"],
        score_checkpoint=values["score"]["checkpoint"],
        classifier_checkpoint=values["classifier"]["checkpoint"],
        translation=translation,
        feature_space=values["metrics"]["feature_space"],
        value_scale=values["metrics"]["value_scale"],
        source_domain=ex["source_domain"],
        target_domain=ex["target_domain"],
        eval_samples=ex["eval_samples"],
        repeat_seeds=tuple(ex["repeat_seeds"]),
    )


def load_config(path):
    with open(path, "r") as f:
        return parse_config(f.read())


def dump_config(cfg):
    """Render a config back to INI text (full schema, explicit values)."""
    parser = configparser.ConfigParser()
    ds, tr = cfg.dataset, cfg.translation
    parser["dataset"] = {
        "kind": ds.kind,
        "num_domains": str(ds.num_domains),
        "samples_per_domain": str(ds.samples_per_domain),
        "test_samples_per_domain": str(ds.test_samples_per_domain),
        "seed": str(ds.seed),
    }
    parser["score"] = {
        "source": cfg.score_source,
        "checkpoint": cfg.score_checkpoint or "",
    }
    parser["classifier"] = {"checkpoint": cfg.classifier_checkpoint or ""}
    parser["translation"] = {
        "sampler": tr.sampler,
        "lambda_s": repr(tr.lambda_s),
        "lambda_i": repr(tr.lambda_i),
        "m_frac": repr(tr.m_frac),
        "steps": str(tr.steps),
        "k_repeats": str(tr.k_repeats),
        "mc_samples": str(tr.mc_samples),
        "noise_free": str(tr.noise_free).lower(),
        "sim_s": tr.sim_s,
        "sim_i": tr.sim_i,
        "filter_factor": str(tr.filter_factor),
        "range_t": str(tr.range_t),
        "guidance_class": "" if tr.guidance_class is None else str(tr.guidance_class),
        "guidance_lambda": repr(tr.guidance_lambda),
    }
    parser["metrics"] = {
        "feature_space": cfg.feature_space,
        "value_scale": repr(cfg.value_scale),
    }
    parser["experiment"] = {
        "source_domain": str(cfg.source_domain),
        "target_domain": str(cfg.target_domain),
        "eval_samples": str(cfg.eval_samples),
        "repeat_seeds": ",".join(str(s) for s in cfg.repeat_seeds),
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
