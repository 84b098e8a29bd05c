"""Command-line driver.

Subcommands: gen-data, train-score, train-classifier, translate, evaluate,
verify-poe, ablate, report. Every subcommand takes --seed. Relative output
paths are resolved under $EGSDE_OUTPUT_ROOT (default: current directory).
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import io as eio
from .config import load_config
from .datasets import ToyDomainSpec, make_toy_domains
from .experiment import (ExperimentError, evaluate_batch, load_samples,
                         run_ablation, run_experiment, save_samples,
                         write_metrics_csv, write_trajectories_csv)
from .extractors import ClassifierHyper, DomainClassifier, train_domain_classifier
from .metrics import MetricReport
from .poe import product_check_cell
from .reporting import render_ablation_report, render_experiment_report
from .samplers import SAMPLERS, Models, TranslationConfig, translate
from .scores import (GmmScoreField, NoisePredictor, PredictorScoreField,
                     TrainHyper, train_noise_predictor)
from .sde import VpSchedule

OUTPUT_ROOT_VAR = "EGSDE_OUTPUT_ROOT"


def _resolve_out(path):
    if os.path.isabs(path):
        return path
    return os.path.join(os.environ.get(OUTPUT_ROOT_VAR, "."), path)


def _dataset_meta_path(data_dir):
    return os.path.join(data_dir, "meta.ini")


def _write_dataset(out_dir, spec):
    data = make_toy_domains(spec)
    with eio.staged_dir(out_dir) as tmp:
        meta = (
            "[dataset]\n"
            f"kind = {spec.kind}\n"
            f"num_domains = {spec.num_domains}\n"
            f"samples_per_domain = {spec.samples_per_domain}\n"
            f"test_samples_per_domain = {spec.test_samples_per_domain}\n"
            f"seed = {spec.seed}\n"
        )
        eio.atomic_write_text(os.path.join(tmp, "meta.ini"), meta)
        for d in range(spec.num_domains):
            save_samples(os.path.join(tmp, f"domain_{d}"), data.domains[d], data.layout)
            save_samples(os.path.join(tmp, f"domain_{d}_test"),
                         data.test_domains[d], data.layout)
    return data


def load_dataset_dir(data_dir):
    """Regenerate the dataset from its recorded spec (exact float values)."""
    import configparser

    path = _dataset_meta_path(data_dir)
    if not os.path.exists(path):
        raise ExperimentError(f"{data_dir}: not a dataset directory (no meta.ini)")
    parser = configparser.ConfigParser()
    parser.read(path)
    sec = parser["dataset"]
    spec = ToyDomainSpec(
        kind=sec.get("kind"),
        num_domains=sec.getint("num_domains"),
        samples_per_domain=sec.getint("samples_per_domain"),
        test_samples_per_domain=sec.getint("test_samples_per_domain"),
        seed=sec.getint("seed"),
    )
    return make_toy_domains(spec)


def _cmd_gen_data(args):
    spec = ToyDomainSpec(
        kind=args.kind,
        num_domains=args.num_domains,
        samples_per_domain=args.samples,
        test_samples_per_domain=args.test_samples,
        seed=args.seed,
    )
    out = _resolve_out(args.out)
    _write_dataset(out, spec)
    print(f"wrote dataset ({spec.kind}, {spec.num_domains} domains) to {out}")


def _cmd_train_score(args):
    data = load_dataset_dir(args.data)
    rows = data.domains[args.domain]
    hyper = TrainHyper(steps=args.steps, batch=args.batch, lr=args.lr, seed=args.seed)
    model, losses = train_noise_predictor(rows, VpSchedule(), hyper,
                                          hidden=tuple(args.hidden))
    out = _resolve_out(args.out)
    model.save(out)
    for epoch, loss in enumerate(losses):
        print(f"epoch {epoch}: loss {loss:.6f}")
    print(f"wrote noise predictor to {out}")


def _cmd_train_classifier(args):
    data = load_dataset_dir(args.data)
    hyper = ClassifierHyper(steps=args.steps, batch=args.batch, lr=args.lr,
                            seed=args.seed, weight_decay=args.weight_decay)
    feature_shape = tuple(args.feature_shape) if args.feature_shape else None
    clf, losses = train_domain_classifier(
        data.domains, VpSchedule(), hyper,
        hidden=tuple(args.hidden), feature_shape=feature_shape,
    )
    out = _resolve_out(args.out)
    clf.save(out)
    print(f"final loss {losses[-1]:.6f} over {len(losses)} steps")
    print(f"wrote domain classifier ({clf.num_domains} domains) to {out}")


def _translation_config(args):
    return TranslationConfig(
        lambda_s=args.lambda_s,
        lambda_i=args.lambda_i,
        m_frac=args.m_frac,
        steps=args.steps,
        k_repeats=args.k,
        seed=args.seed,
        sampler=args.sampler,
        filter_factor=args.filter_factor,
        range_t=args.range_t,
        mc_samples=args.mc_samples,
        noise_free=args.noise_free,
        sim_s=args.sim_s,
        sim_i=args.sim_i,
        guidance_class=args.guidance_class,
        guidance_lambda=args.guidance_lambda,
    )


def _cmd_translate(args):
    data = load_dataset_dir(args.in_dir)
    schedule = VpSchedule()
    if args.score_ckpt:
        score = PredictorScoreField(NoisePredictor.load(args.score_ckpt), schedule)
    elif data.mixtures is not None:
        score = GmmScoreField(data.mixtures[args.target_domain], schedule)
    else:
        raise ExperimentError(
            "image datasets have no analytic score; pass --score-ckpt"
        )
    classifier = DomainClassifier.load(args.clf_ckpt) if args.clf_ckpt else None
    models = Models(schedule, score, classifier, data.layout)
    config = _translation_config(args)
    split = data.test_domains if args.split == "test" else data.domains
    sources = split[args.source_domain]
    if args.limit:
        sources = sources[: args.limit]
    result = translate(sources, config, models)
    out = _resolve_out(args.out)
    with eio.staged_dir(out) as tmp:
        save_samples(os.path.join(tmp, "translated"), result.y, data.layout)
        write_trajectories_csv(os.path.join(tmp, "trajectories.csv"), result.trajectory)
    print(f"translated {sources.shape[0]} samples with {config.sampler} into {out}")


def _cmd_evaluate(args):
    translated, layout = load_samples(args.translated)
    sources, _ = load_samples(args.source)
    target_ref, _ = load_samples(args.target_ref)
    if translated.shape != sources.shape:
        raise ExperimentError(
            f"translated {translated.shape} and source {sources.shape} differ"
        )
    feature_map = None
    if args.clf_ckpt:
        clf = DomainClassifier.load(args.clf_ckpt)
        feature_map = lambda rows: clf.features(rows, 0.0)
    rows, fd = evaluate_batch(
        translated, sources, target_ref, layout=layout,
        value_scale=args.value_scale, feature_map=feature_map, seed=args.seed,
    )
    report = MetricReport(rows=rows, frechet={args.seed: fd})
    out = _resolve_out(args.out)
    write_metrics_csv(out, report)
    agg = report.aggregate()
    line = ", ".join(f"{k}={v:.4f}" for k, v in sorted(agg.items()))
    print(f"{line} -> {out}")


def _cmd_verify_poe(args):
    rows = []
    for k in args.curvatures:
        for v in args.vars:
            tv = product_check_cell(k, v)
            rows.append([k, v, tv])
            print(f"curvature={k:g} var={v:g}: TV(exact, first-order) = {tv:.3e}")
    out = _resolve_out(args.out)
    eio.write_csv(out, "poe-v1", ["curvature", "var", "tv_exact_vs_approx"], rows)
    print(f"wrote {len(rows)} cells to {out}")


def _cmd_ablate(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, repeat_seeds=tuple(args.seed + s for s in range(len(cfg.repeat_seeds))))
    out = _resolve_out(args.out)
    cells = run_ablation(cfg, args.param, args.values, out)
    for label, agg in cells:
        parts = [f"{k}={agg[k]:.4f}" for k in ("l2_mean", "frechet_mean") if agg.get(k) is not None]
        print(f"{args.param}={label}: " + " ".join(parts))
    print(f"wrote ablation table to {os.path.join(out, 'ablation.csv')}")


def _cmd_run(args):
    cfg = load_config(args.config)
    out = _resolve_out(args.out)
    report = run_experiment(cfg, out)
    agg = report.aggregate()
    line = ", ".join(f"{k}={v:.4f}" for k, v in sorted(agg.items()))
    print(f"{line} -> {out}")


def _cmd_report(args):
    out = _resolve_out(args.out)
    if args.ablation:
        figures = render_ablation_report(args.ablation, out)
    else:
        figures = render_experiment_report(args.run, out)
    print(f"wrote summary.csv and {len(figures)} figure(s) to {out}")


def _add_seed(p, default=0):
    p.add_argument("--seed", type=int, default=default)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="egsde",
        description="Energy-guided SDE translation workbench for toy domains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a toy multi-domain dataset")
    p.add_argument("--kind", default="points2d", choices=["points2d", "shapes8", "shapes16"])
    p.add_argument("--num-domains", type=int, default=2)
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--test-samples", type=int, default=200)
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-score", help="fit a noise predictor on one domain")
    p.add_argument("--data", required=True)
    p.add_argument("--domain", type=int, default=1)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, nargs="+", default=[128, 128, 128, 128])
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=_cmd_train_score)

    p = sub.add_parser("train-classifier", help="fit the time-dependent domain classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=1500)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--hidden", type=int, nargs="+", default=[64, 64])
    p.add_argument("--feature-shape", type=int, nargs=3, default=None,
                   metavar=("C", "H", "W"))
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=_cmd_train_classifier)

    p = sub.add_parser("translate", help="translate a source split")
    p.add_argument("--sampler", default="egsde_em", choices=list(SAMPLERS))
    p.add_argument("--lambda-s", type=float, default=500.0)
    p.add_argument("--lambda-i", type=float, default=2.0)
    p.add_argument("--m-frac", type=float, default=0.5)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--score-ckpt", default=None)
    p.add_argument("--clf-ckpt", default=None)
    p.add_argument("--in", dest="in_dir", required=True,
                   help="dataset directory from gen-data")
    p.add_argument("--out", required=True)
    p.add_argument("--source-domain", type=int, default=0)
    p.add_argument("--target-domain", type=int, default=1)
    p.add_argument("--split", default="test", choices=["test", "train"])
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--filter-factor", type=int, default=1)
    p.add_argument("--range-t", type=int, default=20)
    p.add_argument("--mc-samples", type=int, default=1)
    p.add_argument("--noise-free", action="store_true")
    p.add_argument("--sim-s", default="cosine", choices=["cosine", "neg_sq_l2"])
    p.add_argument("--sim-i", default="neg_sq_l2", choices=["cosine", "neg_sq_l2"])
    p.add_argument("--guidance-class", type=int, default=None)
    p.add_argument("--guidance-lambda", type=float, default=0.0)
    _add_seed(p)
    p.set_defaults(func=_cmd_translate)

    p = sub.add_parser("evaluate", help="score translated outputs")
    p.add_argument("--translated", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target-ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--value-scale", type=float, default=1.0)
    p.add_argument("--clf-ckpt", default=None,
                   help="score realism in this classifier's feature space")
    _add_seed(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("verify-poe", help="product-of-experts lattice checks")
    p.add_argument("--curvatures", type=lambda s: [float(v) for v in s.split(",")],
                   default=[0.0, 0.1, 1.0])
    p.add_argument("--vars", type=lambda s: [float(v) for v in s.split(",")],
                   default=[0.01, 0.1, 1.0])
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=_cmd_verify_poe)

    p = sub.add_parser("run", help="run one experiment config end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("ablate", help="sweep one translation parameter")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", type=lambda s: s.split(","), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="rebase the repeat seeds of the config")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("report", help="render summary tables and figures")
    p.add_argument("--run", default=None, help="experiment run directory")
    p.add_argument("--ablation", default=None, help="ablation.csv path")
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "report" and not (args.run or args.ablation):
        parser.error("report needs --run or --ablation")
    try:
        args.func(args)
    except (ExperimentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
