import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as scipy_stats

from eegdann.autodiff import checkpoint
from eegdann.data.windows import WindowSet
from eegdann.harness import cli
from eegdann.harness.config import ABLATIONS, RunConfig, bench_config
from eegdann.harness.metrics import compute_metrics
from eegdann.harness.pipeline import FoldReport, PipelineError, load_windows, loso_split, run_pipeline
from eegdann.harness.stats import paired_ttest, t_two_tailed_p
from eegdann.harness.study import FOLD_COLUMNS, fold_plan, study, summarize

TINY = dict(
    synth_subjects=3, synth_trials=2,
    teacher_temporal_dim=8, teacher_electrode_dim=8, teacher_brain_dim=8, teacher_heads=2,
    teacher_electrode_blocks=1, teacher_brain_blocks=1, teacher_temporal_mlp_dim=16,
    teacher_electrode_mlp_dim=16, teacher_brain_mlp_dim=16,
    student_temporal_hidden=4, student_electrode_hidden=3, student_brain_hidden=3, fuse_dim=4,
    teacher_epochs=1, student_epochs=1, dann_epochs=2,
    teacher_batch_size=16, student_batch_size=16, dann_batch_size=16,
)


@pytest.fixture(scope="module")
def tiny():
    config = RunConfig(**TINY)
    windows, region_map = load_windows(config)
    return config, windows, region_map


# -- metrics --------------------------------------------------------------------

def test_metrics_examples():
    y = np.array([1, 0, 1, 0])
    assert compute_metrics(y, y) == compute_metrics(y.astype(float), y)
    m = compute_metrics(y, y)
    assert (m.accuracy, m.f1, m.f1_undefined) == (1.0, 1.0, False)
    m = compute_metrics(np.ones(4), y)
    assert m.accuracy == 0.5 and math.isclose(m.f1, 2 / 3)
    m = compute_metrics(np.zeros(4), y)
    assert m.f1 == 0.0 and m.f1_undefined
    assert compute_metrics([0.5], [1]).accuracy == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_inverted_labels_complement_accuracy(rows):
    p = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    a = compute_metrics(p, y)
    b = compute_metrics(p, 1 - y)
    assert math.isclose(a.accuracy + b.accuracy, 1.0)
    assert 0.0 <= a.f1 <= 1.0


def test_metrics_reject_bad_input():
    with pytest.raises(ValueError):
        compute_metrics([], [])
    with pytest.raises(ValueError):
        compute_metrics([1, 0], [1])
    with pytest.raises(ValueError):
        compute_metrics([1, 0], [1, 2])


# -- t-test ---------------------------------------------------------------------

def test_ttest_examples():
    r = paired_ttest([0.6, 0.7, 0.8], [0.6, 0.7, 0.8])
    assert (r.t, r.p, r.degenerate) == (0.0, 1.0, True)
    r = paired_ttest([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
    assert r.degenerate and r.p == 0.0 and r.t == math.inf
    assert abs(t_two_tailed_p(2.262, 9) - 0.05) < 1e-3
    with pytest.raises(ValueError):
        paired_ttest([1.0], [2.0])


@settings(max_examples=60, deadline=None)
@given(st.floats(-20, 20), st.integers(1, 60))
def test_t_tail_matches_reference_distribution(t, dof):
    assert abs(t_two_tailed_p(t, dof) - 2 * scipy_stats.t.sf(abs(t), dof)) < 1e-9


def test_paired_ttest_matches_reference():
    rng = np.random.default_rng(0)
    a, b = rng.random(8), rng.random(8)
    r = paired_ttest(a, b)
    ref = scipy_stats.ttest_rel(a, b)
    assert math.isclose(r.t, ref.statistic, rel_tol=1e-12)
    assert abs(r.p - ref.pvalue) < 1e-9 and r.dof == 7


# -- config ---------------------------------------------------------------------

def test_config_defaults():
    c = RunConfig()
    assert (c.teacher_batch_size, c.teacher_epochs, c.teacher_lr) == (512, 60, 1e-3)
    assert (c.dann_batch_size, c.dann_epochs, c.dann_lr, c.kd_lambda) == (256, 80, 1e-3, 0.3)
    assert c.teacher_config().temporal_dim == 64 and c.student_config().temporal_hidden == 64


def test_config_round_trip(tmp_path):
    c = bench_config().replace(folds=("S01", "S03"), task="valence", grl_coeff=0.25)
    c.save(tmp_path / "c.txt")
    assert RunConfig.load(tmp_path / "c.txt") == c
    assert RunConfig.from_text(c.to_text()) == c


def test_config_rejects_unknown_and_malformed():
    with pytest.raises(ValueError, match="unknown config key"):
        RunConfig.from_text("kd_on = true\nlearning_rate = 3\n")
    with pytest.raises(ValueError):
        RunConfig.from_text("kd_on = maybe\n")
    with pytest.raises(ValueError):
        RunConfig.from_text("just a line\n")
    with pytest.raises(ValueError):
        RunConfig(kd_lambda=2.0)
    with pytest.raises(ValueError):
        RunConfig(student_epochs=0)
    assert RunConfig.from_text("# comment\n\nseed = 4  # trailing\n").seed == 4


def test_ablation_lattice():
    names = {RunConfig().ablation(a).name for a in ABLATIONS}
    assert names == {"full", "no_kd", "no_dann", "no_kd_no_dann", "no_fim"}
    with pytest.raises(ValueError):
        RunConfig().ablation("no_everything")


# -- split and study bookkeeping -------------------------------------------------

def test_loso_split_partitions_by_subject():
    subjects = np.repeat([f"S{i:02d}" for i in range(1, 33)], 3)
    ws = WindowSet(np.zeros((96, 1, 1)), np.zeros(96, dtype=int), subjects)
    for held in ws.subjects:
        src, tgt = loso_split(ws, held)
        assert len(src) + len(tgt) == 96
        assert set(tgt.subject) == {held} and held not in set(src.subject)
        assert len(src.subjects) == 31
    with pytest.raises(PipelineError):
        loso_split(ws, "S99")
    with pytest.raises(PipelineError):
        loso_split(ws.subset(ws.subject == "S01"), "S01")


def fake_fold(sid, acc):
    return FoldReport(sid, 0, acc, acc, False, acc, 10, 5, {"teacher": 10, "student": 2, "extractor": 3})


def test_summary_strata():
    folds = [fake_fold(f"S0{i}", a) for i, a in enumerate([0.5, 0.9, 0.7, 0.6, 0.8, 0.4], 1)]
    s = summarize(folds, top_k=10)
    assert s["top"]["k"] == 6 and "top-6" in s["top"]["note"]
    assert math.isclose(s["all"]["accuracy"]["std"], np.std([0.5, 0.9, 0.7, 0.6, 0.8, 0.4], ddof=1))
    s = summarize(folds, top_k=3)
    assert s["top"]["subjects"] == ["S02", "S05", "S03"] and "note" not in s["top"]
    assert math.isclose(s["top"]["accuracy"]["mean"], 0.8)


def test_fold_plan():
    subjects = ["S01", "S02", "S03"]
    assert fold_plan(RunConfig(), subjects) == [("S01", 0), ("S02", 0), ("S03", 0)]
    assert fold_plan(RunConfig(seed=1, fold_per_seed=True, n_seeds=3), subjects) == \
        [("S02", 1), ("S03", 2), ("S01", 3)]
    with pytest.raises(ValueError):
        fold_plan(RunConfig(folds=("S09",)), subjects)


def test_fold_report_json_round_trip():
    f = fake_fold("S01", 0.75)
    assert FoldReport.from_json(json.loads(json.dumps(f.to_json()))) == f


# -- pipeline -------------------------------------------------------------------

def test_pipeline_run_directory(tiny, tmp_path):
    config, windows, region_map = tiny
    report = run_pipeline(config, windows, "S02", tmp_path, region_map)
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"config.txt", "seed.txt", "teacher.ckpt", "teacher.csv", "student.ckpt", "student.csv",
                     "dann.ckpt", "dann.csv", "fold.json"}
    assert 0 <= report.accuracy <= 1 and 0 <= report.f1 <= 1
    assert report.n_source + report.n_target == len(windows)
    assert FoldReport.from_json(json.loads((tmp_path / "fold.json").read_text())) == report
    assert RunConfig.load(tmp_path / "config.txt") == config


def test_pipeline_corner_is_the_plain_student(tiny):
    config, windows, region_map = tiny
    plain = run_pipeline(config.ablation("no_kd_no_dann"), windows, "S01", None, region_map)
    assert plain.accuracy == plain.student_accuracy
    assert set(plain.traces) == {"student"}


def test_pipeline_is_deterministic(tiny):
    config, windows, region_map = tiny
    a = run_pipeline(config, windows, "S03", None, region_map, seed=2)
    b = run_pipeline(config, windows, "S03", None, region_map, seed=2)
    a.wall_clock = b.wall_clock = 0.0
    assert a == b


def test_target_labels_cannot_influence_training(tiny, tmp_path):
    config, windows, region_map = tiny
    flipped = WindowSet(windows.X, np.where(windows.subject == "S01", 1 - windows.y, windows.y), windows.subject)
    a = run_pipeline(config, windows, "S01", tmp_path / "a", region_map)
    b = run_pipeline(config, flipped, "S01", tmp_path / "b", region_map)
    for name in ("teacher.ckpt", "student.ckpt", "dann.ckpt"):
        assert checkpoint.digest(checkpoint.load(tmp_path / "a" / name)) == \
            checkpoint.digest(checkpoint.load(tmp_path / "b" / name))
    assert math.isclose(a.accuracy + b.accuracy, 1.0)


def test_study_bookkeeping_and_failures(tiny, tmp_path):
    config, windows, region_map = tiny
    config = config.replace(compare=("no_kd",), teacher_epochs=1, dann_epochs=1)
    report = study(config, windows, region_map, tmp_path)
    assert [f.held_out for f in report.folds] == ["S01", "S02", "S03"]
    assert report.summary["top"]["k"] == 3
    assert report.param_counts["ratio"] == report.param_counts["extractor"] / report.param_counts["teacher"]
    assert set(report.comparisons) == {"no_kd"}
    rows = (tmp_path / "folds.csv").read_text().splitlines()
    assert rows[0] == ",".join(FOLD_COLUMNS) and len(rows) == 7
    assert json.loads((tmp_path / "study.json").read_text())["config_name"] == "full"
    assert "top-3 subjects" in report.table() and "vs no_kd" in report.table()

    broken = WindowSet(windows.X, windows.y, windows.subject)
    broken.X = broken.X[:, :, :700]
    failed = study(config.replace(compare=()), broken, region_map)
    assert len(failed.failures) == 3 and not failed.folds


# -- command line ---------------------------------------------------------------

def test_cli_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "tiny.txt"
    RunConfig(**TINY).save(cfg)
    base = ["--config", str(cfg)]
    data = tmp_path / "bundle"
    assert cli.main(["synth", *base, "--out", str(data)]) == 0
    base += ["--data", str(data)]
    npz = tmp_path / "w.npz"
    assert cli.main(["preprocess", *base, "--out", str(npz)]) == 0
    fold = [*base, "--held-out", "S02", "--windows", str(npz)]
    assert cli.main(["train-teacher", *fold, "--out", str(tmp_path / "t")]) == 0
    assert cli.main(["distill", *fold, "--teacher", str(tmp_path / "t" / "teacher.ckpt"),
                     "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["adapt", *fold, "--student", str(tmp_path / "s" / "student.ckpt"),
                     "--out", str(tmp_path / "d")]) == 0
    capsys.readouterr()
    assert cli.main(["evaluate", *fold, "--model", str(tmp_path / "d" / "dann.ckpt")]) == 0
    scored = json.loads(capsys.readouterr().out)
    assert scored["held_out"] == "S02" and 0 <= scored["accuracy"] <= 1
    assert cli.main(["evaluate", *fold, "--kind", "student", "--model", str(tmp_path / "s" / "student.ckpt")]) == 0
    assert cli.main(["export-embeddings", *fold, "--model", str(tmp_path / "d" / "dann.ckpt"),
                     "--out", str(tmp_path / "emb.csv")]) == 0
    assert len((tmp_path / "emb.csv").read_text().splitlines()) == 1 + 60
    assert cli.main(["analyze-psd", *base, "--band", "gamma", "--out", str(tmp_path / "psd.csv")]) == 0
    lines = (tmp_path / "psd.csv").read_text().splitlines()
    assert lines[0] == "subject,S01,S02,S03" and lines[1].split(",")[1] == "1.0"
    assert cli.main(["loso", *base, "--no-kd", "--out", str(tmp_path / "loso")]) == 0
    assert json.loads((tmp_path / "loso" / "study.json").read_text())["config_name"] == "no_kd"


def test_cli_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("no_such_key = 1\n")
    assert cli.main(["loso", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "unknown config key" in capsys.readouterr().err
    assert cli.main(["preprocess", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "w.npz")]) == 2
