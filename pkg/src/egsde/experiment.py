"""Experiment orchestration: translate a test split under repeat seeds,
score it, and write reports atomically.

A run directory contains:

    config.ini                    exact configuration of the run
    metrics.csv                   per-(seed, sample) faithfulness rows
    frechet.csv                   per-seed realism proxy
    aggregate.csv                 mean +- std across repeat seeds
    translated_seed<k>/           translated outputs (points.csv or *.pgm)
    trajectories_seed<k>.csv      per-sample step summaries

Ablations run one such experiment per swept value and collect the
aggregates into a single table.
"""
from __future__ import annotations

import os
from dataclasses import replace

import numpy as np

from . import io as eio
from .config import SWEEP_ALIASES, ConfigError, dump_config
from .datasets import make_toy_domains
from .extractors import DomainClassifier
from .metrics import MetricReport, MetricRow, frechet_distance, l2, psnr, ssim
from .samplers import Models, translate
from .scores import GmmScoreField, NoisePredictor, PredictorScoreField
from .sde import VpSchedule


class ExperimentError(RuntimeError):
    pass


def _needs_classifier(cfg):
    tr = cfg.translation
    return (tr.lambda_s > 0.0 or tr.guidance_lambda > 0.0
            or cfg.feature_space == "classifier")


def load_models(cfg, data):
    """Build the model bundle; every referenced checkpoint must exist."""
    schedule = VpSchedule()
    if cfg.score_source == "analytic":
        if data.mixtures is None:
            raise ExperimentError(
                f"analytic score unavailable for dataset kind {cfg.dataset.kind!r}; "
                "train a noise predictor instead"
            )
        score = GmmScoreField(data.mixtures[cfg.target_domain], schedule)
    else:
        if not os.path.exists(cfg.score_checkpoint):
            raise ExperimentError(f"missing checkpoint: {cfg.score_checkpoint}")
        score = PredictorScoreField(NoisePredictor.load(cfg.score_checkpoint), schedule)
    classifier = None
    if cfg.classifier_checkpoint:
        if not os.path.exists(cfg.classifier_checkpoint):
            raise ExperimentError(f"missing checkpoint: {cfg.classifier_checkpoint}")
        classifier = DomainClassifier.load(cfg.classifier_checkpoint)
    elif _needs_classifier(cfg):
        raise ExperimentError(
            "this configuration needs a domain classifier checkpoint "
            "(lambda_s > 0, classifier guidance, or classifier feature space)"
        )
    return Models(schedule, score, classifier, data.layout)


def _feature_map(cfg, models):
    if cfg.feature_space == "classifier":
        clf = models.classifier
        return lambda rows: clf.features(rows, 0.0)
    return lambda rows: rows


def evaluate_batch(translated, sources, target_ref, *, layout=None,
                   value_scale=1.0, feature_map=None, seed=0):
    """Faithfulness rows against the sources plus one Fréchet value.

    Image rows live in [-1, 1]; value_scale = 127.5 puts L2/PSNR on the
    0-255 convention and SSIM runs on the [0, 1] remap.
    """
    rows = []
    scale = value_scale
    for i in range(translated.shape[0]):
        a, b = scale * translated[i], scale * sources[i]
        if layout is not None:
            img_a = (translated[i].reshape(layout) + 1.0) / 2.0
            img_b = (sources[i].reshape(layout) + 1.0) / 2.0
            window = min(8, layout[1], layout[2])
            rows.append(MetricRow(seed, i, l2(a, b), psnr(a, b),
                                  ssim(img_a, img_b, data_range=1.0, window=window)))
        else:
            rows.append(MetricRow(seed, i, l2(a, b)))
    fm = feature_map or (lambda r: r)
    fd = frechet_distance(fm(translated), fm(target_ref))
    return rows, fd


def run_translation(cfg, data, models, seed):
    sources = data.test_domains[cfg.source_domain][: cfg.eval_samples]
    tcfg = replace(cfg.translation, seed=seed)
    return sources, translate(sources, tcfg, models)


def run_experiment(cfg, out_dir=None):
    """Full protocol: translate the test split once per repeat seed, score
    every output, aggregate across seeds. Returns the MetricReport; when
    out_dir is given all artifacts are staged and renamed into place.
    """
    data = make_toy_domains(cfg.dataset)
    models = load_models(cfg, data)
    feature_map = _feature_map(cfg, models)
    target_ref = data.test_domains[cfg.target_domain][: cfg.eval_samples]

    report = MetricReport()
    outputs = {}
    for seed in cfg.repeat_seeds:
        sources, result = run_translation(cfg, data, models, seed)
        rows, fd = evaluate_batch(
            result.y, sources, target_ref, layout=data.layout,
            value_scale=cfg.value_scale, feature_map=feature_map, seed=seed,
        )
        if seed not in outputs:  # duplicated seeds rerun identically; keep one copy
            outputs[seed] = result
        report.rows.extend(rows)
        report.frechet[seed] = fd

    if out_dir is not None:
        with eio.staged_dir(out_dir) as tmp:
            _write_run_artifacts(tmp, cfg, data, report, outputs)
    return report


def _write_run_artifacts(tmp, cfg, data, report, outputs):
    eio.atomic_write_text(os.path.join(tmp, "config.ini"), dump_config(cfg))
    write_metrics_csv(os.path.join(tmp, "metrics.csv"), report)
    eio.write_csv(
        os.path.join(tmp, "frechet.csv"), "frechet-v1", ["seed", "frechet"],
        [[s, report.frechet[s]] for s in sorted(report.frechet)],
    )
    write_aggregate_csv(os.path.join(tmp, "aggregate.csv"), report.aggregate())
    for seed, result in outputs.items():
        save_samples(os.path.join(tmp, f"translated_seed{seed}"), result.y, data.layout)
        write_trajectories_csv(
            os.path.join(tmp, f"trajectories_seed{seed}.csv"), result.trajectory
        )


def write_metrics_csv(path, report):
    rows = [[r.seed, r.sample_id, r.l2, r.psnr, r.ssim] for r in report.rows]
    eio.write_csv(path, "metrics-v1", ["seed", "sample_id", "l2", "psnr", "ssim"], rows)


def read_metrics_csv(path):
    _, _, rows = eio.read_csv(path, "metrics-v1")
    report = MetricReport()
    for seed, sample_id, l2v, psnrv, ssimv in rows:
        report.rows.append(MetricRow(
            int(seed), int(sample_id), float(l2v),
            float(psnrv) if psnrv else None, float(ssimv) if ssimv else None,
        ))
    return report


def write_aggregate_csv(path, aggregate):
    eio.write_csv(path, "aggregate-v1", ["metric", "value"],
                  [[k, v] for k, v in sorted(aggregate.items())])


def write_trajectories_csv(path, trajectory):
    times, energies, grad_norms, draw_ids = trajectory.as_arrays()
    rows = []
    for b in range(energies.shape[1]):
        for k in range(len(times)):
            rows.append([b, k + 1, times[k], energies[k, b], grad_norms[k, b],
                         int(draw_ids[k])])
    eio.write_csv(path, "trajectory-v1",
                  ["sample", "step", "t", "energy", "grad_norm", "draw_id"], rows)


def save_samples(dir_path, rows, layout):
    """Points go to one CSV; image rows ([-1, 1]) go to one PGM/PPM each."""
    os.makedirs(dir_path, exist_ok=True)
    if layout is None:
        eio.write_points_csv(os.path.join(dir_path, "points.csv"), np.atleast_2d(rows))
        return
    c, h, w = layout
    for i, row in enumerate(np.atleast_2d(rows)):
        img = np.clip((row.reshape(layout) + 1.0) / 2.0, 0.0, 1.0)
        name = os.path.join(dir_path, f"{i:05d}")
        if c == 1:
            eio.write_pgm(name + ".pgm", img[0])
        elif c == 3:
            eio.write_ppm(name + ".ppm", img)
        else:
            raise ExperimentError(f"no plain image format for {c} channels")


def load_samples(dir_path):
    """Inverse of save_samples; returns (rows, layout)."""
    csv_path = os.path.join(dir_path, "points.csv")
    if os.path.exists(csv_path):
        return eio.read_points_csv(csv_path), None
    pgms = sorted(f for f in os.listdir(dir_path) if f.endswith(".pgm"))
    ppms = sorted(f for f in os.listdir(dir_path) if f.endswith(".ppm"))
    if pgms:
        imgs = [eio.read_pgm(os.path.join(dir_path, f)) for f in pgms]
        layout = (1, *imgs[0].shape)
    elif ppms:
        imgs = [eio.read_ppm(os.path.join(dir_path, f)) for f in ppms]
        layout = imgs[0].shape
    else:
        raise ExperimentError(f"{dir_path}: no points.csv and no image files")
    return np.stack([2.0 * img.reshape(-1) - 1.0 for img in imgs]), layout


def run_ablation(cfg, param, values, out_dir=None):
    """Sweep one translation parameter; returns [(value, aggregate), ...]."""
    param = SWEEP_ALIASES.get(param, param)
    cells = []
    for raw in values:
        sub = cfg.with_sweep_value(param, raw)
        label = str(raw)
        cell_dir = os.path.join(out_dir, f"{param}={label}") if out_dir else None
        report = run_experiment(sub, cell_dir)
        cells.append((label, report.aggregate()))
    if out_dir is not None:
        write_ablation_csv(os.path.join(out_dir, "ablation.csv"), param, cells)
    return cells


_ABLATION_COLUMNS = ["l2_mean", "l2_std", "psnr_mean", "psnr_std",
                     "ssim_mean", "ssim_std", "frechet_mean", "frechet_std"]


def write_ablation_csv(path, param, cells):
    rows = [[param, label] + [agg.get(c) for c in _ABLATION_COLUMNS]
            for label, agg in cells]
    eio.write_csv(path, "ablation-v1", ["param", "value"] + _ABLATION_COLUMNS, rows)


def read_ablation_csv(path):
    _, header, raw = eio.read_csv(path, "ablation-v1")
    rows = []
    for row in raw:
        entry = {"param": row[0], "value": row[1]}
        for name, val in zip(header[2:], row[2:]):
            entry[name] = float(val) if val else None
        rows.append(entry)
    return rows
