import os
from dataclasses import replace

import numpy as np
import pytest

from egsde.config import ExperimentConfig, parse_config
from egsde.datasets import ToyDomainSpec, make_toy_domains
from egsde.experiment import (ExperimentError, load_samples, read_ablation_csv,
                              read_metrics_csv, run_ablation, run_experiment,
                              save_samples)
from egsde.extractors import ClassifierHyper, train_domain_classifier
from egsde.samplers import TranslationConfig
from egsde.sde import VpSchedule


@pytest.fixture(scope="module")
def clf_ckpt(tmp_path_factory):
    spec = ToyDomainSpec(kind="points2d", samples_per_domain=300,
                         test_samples_per_domain=50, seed=0)
    data = make_toy_domains(spec)
    # narrow trunk: 16-dim features keep the Fréchet moment fits well posed
    clf, _ = train_domain_classifier(data.domains, VpSchedule(),
                                     ClassifierHyper(steps=600, seed=0),
                                     hidden=(32, 16))
    path = tmp_path_factory.mktemp("ckpt") / "clf.ckpt"
    clf.save(path)
    return str(path)


def small_config(clf_ckpt=None, **translation):
    tr = dict(lambda_s=0.0, lambda_i=1.0, m_frac=0.5, steps=15, sampler="egsde_em")
    tr.update(translation)
    return ExperimentConfig(
        dataset=ToyDomainSpec(kind="points2d", samples_per_domain=300,
                              test_samples_per_domain=50, seed=0),
        translation=TranslationConfig(**tr),
        classifier_checkpoint=clf_ckpt,
        eval_samples=24,
        repeat_seeds=(0, 1),
    )


def test_run_experiment_writes_all_artifacts(tmp_path, clf_ckpt):
    out = tmp_path / "run"
    report = run_experiment(small_config(clf_ckpt), str(out))
    assert (out / "config.ini").exists()
    assert (out / "metrics.csv").exists()
    assert (out / "frechet.csv").exists()
    assert (out / "aggregate.csv").exists()
    assert (out / "translated_seed0" / "points.csv").exists()
    assert (out / "trajectories_seed1.csv").exists()
    assert len(report.rows) == 2 * 24
    assert set(report.frechet) == {0, 1}
    back = read_metrics_csv(out / "metrics.csv")
    assert len(back.rows) == len(report.rows)
    assert back.rows[0].l2 == report.rows[0].l2


def test_rerun_is_bit_identical(tmp_path, clf_ckpt):
    cfg = small_config(clf_ckpt, lambda_s=3.0)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    run_experiment(cfg, str(out_a))
    run_experiment(cfg, str(out_b))
    for name in ("metrics.csv", "frechet.csv", "aggregate.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    pa, _ = load_samples(str(out_a / "translated_seed0"))
    pb, _ = load_samples(str(out_b / "translated_seed0"))
    assert np.array_equal(pa, pb)


def test_duplicate_seed_rows_identical(clf_ckpt):
    cfg = replace(small_config(clf_ckpt), repeat_seeds=(3, 3))
    report = run_experiment(cfg)
    rows = {}
    for r in report.rows:
        key = r.sample_id
        rows.setdefault(key, []).append(r.l2)
    for vals in rows.values():
        assert vals[0] == vals[1]


def test_sdedit_equals_zero_weight_guided_report(clf_ckpt):
    guided = replace(small_config(clf_ckpt), translation=TranslationConfig(
        lambda_s=0.0, lambda_i=0.0, m_frac=0.5, steps=15, sampler="egsde_em"))
    baseline = replace(guided, translation=replace(guided.translation, sampler="sdedit"))
    ra = run_experiment(guided)
    rb = run_experiment(baseline)
    assert [r.l2 for r in ra.rows] == [r.l2 for r in rb.rows]
    assert ra.frechet == rb.frechet


def test_missing_checkpoint_is_an_error(tmp_path):
    cfg = replace(small_config(None), classifier_checkpoint=str(tmp_path / "nope.ckpt"))
    with pytest.raises(ExperimentError, match="missing checkpoint"):
        run_experiment(cfg)


def test_lambda_s_without_classifier_is_an_error():
    cfg = small_config(None, lambda_s=5.0)
    with pytest.raises(ExperimentError, match="classifier"):
        run_experiment(cfg)


def test_analytic_score_unavailable_for_images():
    cfg = replace(
        small_config(None),
        dataset=ToyDomainSpec(kind="shapes8", samples_per_domain=20,
                              test_samples_per_domain=10, seed=0),
        eval_samples=5,
    )
    with pytest.raises(ExperimentError, match="analytic"):
        run_experiment(cfg)


def test_interrupted_run_leaves_no_partial_outputs(tmp_path, clf_ckpt, monkeypatch):
    out = tmp_path / "run"
    import egsde.experiment as exp

    def boom(*args, **kwargs):
        raise KeyboardInterrupt

    monkeypatch.setattr(exp, "write_metrics_csv", boom)
    with pytest.raises(KeyboardInterrupt):
        run_experiment(small_config(clf_ckpt), str(out))
    assert not out.exists()
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".staging")]


def test_faithful_weight_sweep_is_monotone(tmp_path, clf_ckpt):
    cfg = replace(small_config(clf_ckpt, steps=40), repeat_seeds=(0,), eval_samples=48)
    cells = run_ablation(cfg, "lambda_i", ["0", "2", "5"], str(tmp_path / "sweep"))
    l2s = [agg["l2_mean"] for _, agg in cells]
    assert l2s[0] > l2s[1] > l2s[2]
    rows = read_ablation_csv(tmp_path / "sweep" / "ablation.csv")
    assert [r["value"] for r in rows] == ["0", "2", "5"]
    assert rows[0]["l2_mean"] == pytest.approx(l2s[0])
    assert (tmp_path / "sweep" / "lambda_i=2" / "metrics.csv").exists()


def test_save_load_samples_points(tmp_path):
    rows = np.array([[0.25, -1.5], [3.0, 0.125]])
    save_samples(str(tmp_path / "s"), rows, None)
    back, layout = load_samples(str(tmp_path / "s"))
    assert layout is None
    assert np.array_equal(back, rows)


def test_save_load_samples_images(tmp_path):
    rows = (np.round(np.linspace(0, 1, 2 * 64).reshape(2, 64) * 255) / 255.0) * 2.0 - 1.0
    save_samples(str(tmp_path / "imgs"), rows, (1, 8, 8))
    back, layout = load_samples(str(tmp_path / "imgs"))
    assert layout == (1, 8, 8)
    assert np.allclose(back, rows, atol=1e-12)


def test_classifier_feature_space_report(clf_ckpt):
    cfg = replace(small_config(clf_ckpt), feature_space="classifier",
                  repeat_seeds=(0,), eval_samples=40)
    report = run_experiment(cfg)
    assert report.frechet[0] >= 0.0
