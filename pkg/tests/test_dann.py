import csv
import inspect
import math

import numpy as np
import pytest

from eegdann.autodiff import Tensor, ShapeError, checkpoint
from eegdann.autodiff.tensor import LEAKY_SLOPE
from eegdann.dann import (DannModel, FeatureFusion, SpatialProjection, dann_loss, export_embeddings,
                          fuse_features, grl_ramp, train_dann)
from eegdann.data.windows import WindowSet
from eegdann.student import Student, StudentConfig
from eegdann.training import Schedule

SMALL = StudentConfig(temporal_hidden=4, electrode_hidden=3, brain_hidden=3)


def small_model(seed=0, fim=True, fuse_dim=8):
    return DannModel(Student(SMALL, rng=np.random.default_rng(seed)), fuse_dim, fim, np.random.default_rng(seed + 1))


def batch(seed, ns=4, nt=4):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((ns, 32, 768)), (np.arange(ns) % 2).astype(float),
            rng.standard_normal((nt, 32, 768)))


def log_sigmoid(z):
    return -math.log1p(math.exp(-z)) if z >= 0 else z - math.log1p(math.exp(z))


def brute_bce(logits, labels):
    terms = [-(y * log_sigmoid(z) + (1 - y) * log_sigmoid(-z)) for z, y in zip(logits, labels)]
    return sum(terms) / len(terms)


def brute_affine(rows, w, b):
    out = []
    for r in rows:
        out.append([sum(float(r[i]) * float(w[i, j]) for i in range(len(r))) + float(b[j])
                    for j in range(w.shape[1])])
    return out


# -- loss -----------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_dann_loss_matches_brute_force(seed):
    model = small_model(seed)
    model.train()
    xs, ys, xt = batch(seed)
    loss = dann_loss(model, xs, ys, xt)
    model.train()
    feats = model.extractor(Tensor(np.concatenate([xs, xt]))).data
    em = [row[0] for row in brute_affine(feats[:4], model.emotion.out.weight.data, model.emotion.out.bias.data)]
    hidden = brute_affine(feats, model.domain.fc.weight.data, model.domain.fc.bias.data)
    hidden = [[v if v > 0 else LEAKY_SLOPE * v for v in row] for row in hidden]
    dom = [row[0] for row in brute_affine(np.array(hidden), model.domain.out.weight.data,
                                           model.domain.out.bias.data)]
    l_c = brute_bce(em, ys)
    l_d = brute_bce(dom, [0] * 4 + [1] * 4)
    assert math.isclose(loss.l_c.item(), l_c, rel_tol=1e-9)
    assert math.isclose(loss.l_d.item(), l_d, rel_tol=1e-9)
    assert math.isclose(loss.value, l_c - l_d, rel_tol=1e-9, abs_tol=1e-12)
    correct = sum((z > 0) == (d == 1) for z, d in zip(dom, [0] * 4 + [1] * 4))
    assert loss.domain_acc == correct / 8


def test_uninformative_domain_head_gives_ln2():
    model = small_model()
    model.domain.out.weight.data[...] = 0.0
    model.domain.out.bias.data[...] = 0.0
    loss = dann_loss(model, *batch(0))
    assert math.isclose(loss.l_d.item(), math.log(2.0), rel_tol=1e-12)


def test_confident_emotion_head_drives_source_loss_to_zero():
    model = small_model()
    xs, ys, xt = batch(1)
    model.emotion.out.weight.data[...] = 0.0
    model.emotion.out.bias.data[...] = 0.0
    base = dann_loss(model, xs, np.ones(4), xt).l_c.item()
    model.emotion.out.bias.data[...] = 40.0
    assert dann_loss(model, xs, np.ones(4), xt).l_c.item() < 1e-15 < base


def test_single_domain_batch_rejected():
    xs, ys, xt = batch(0)
    with pytest.raises(ValueError):
        dann_loss(small_model(), xs, ys, xt[:0])
    with pytest.raises(ValueError):
        dann_loss(small_model(), xs[:0], ys[:0], xt)


def test_target_rows_never_reach_the_emotion_loss():
    model = small_model()
    xs, ys, xt = batch(2)
    model.extractor.eval()
    a = dann_loss(model, xs, ys, xt).l_c.item()
    b = dann_loss(model, xs, ys, xt[::-1] * 3.0).l_c.item()
    assert a == b


def test_domain_gradient_reaches_extractor_reversed():
    model = small_model()
    xs, ys, xt = batch(3)
    loss = dann_loss(model, xs, ys, xt, grl_coeff=0.0)
    loss.l_d.backward()
    assert not model.extractor.fusion.tem.weight.grad.any()
    assert model.domain.fc.weight.grad.any()


def test_grl_ramp_endpoints():
    assert grl_ramp(0.0) == 0.0
    assert math.isclose(grl_ramp(1.0), 2 / (1 + math.exp(-10)) - 1)
    assert all(grl_ramp(a) < grl_ramp(b) for a, b in zip(np.linspace(0, 0.9, 10), np.linspace(0.1, 1, 10)))


# -- fusion ---------------------------------------------------------------------

def test_default_fusion_width():
    fusion = FeatureFusion(32 * 128, 64, 128, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    ft, fs = rng.standard_normal((6, 32, 128)), rng.standard_normal((6, 64))
    out = fuse_features(Tensor(ft), Tensor(fs), fusion)
    assert out.shape == (6, 256)
    leaky = lambda v: np.where(v > 0, v, LEAKY_SLOPE * v)  # noqa: E731
    raw = np.concatenate([leaky(ft.reshape(6, -1) @ fusion.tem.weight.data + fusion.tem.bias.data),
                          leaky(fs @ fusion.spa.weight.data + fusion.spa.bias.data)], axis=1)
    np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.data.var(axis=0), raw.var(axis=0) / (raw.var(axis=0) + fusion.bn.eps), rtol=1e-9)


def test_fusion_eval_mode_is_deterministic_and_batch_independent():
    fusion = FeatureFusion(20, 6, 5, np.random.default_rng(0))
    rng = np.random.default_rng(2)
    ft, fs = rng.standard_normal((4, 4, 5)), rng.standard_normal((4, 6))
    fuse_features(Tensor(ft), Tensor(fs), fusion, "train")
    a = fuse_features(Tensor(ft), Tensor(fs), fusion, "eval").data
    b = fuse_features(Tensor(ft), Tensor(fs), fusion, "eval").data
    one = fuse_features(Tensor(ft[:1]), Tensor(fs[:1]), fusion, "eval").data
    assert np.array_equal(a, b)
    np.testing.assert_allclose(one, a[:1], rtol=1e-12)


def test_fusion_rejects_single_row_training_batch_and_bad_mode():
    fusion = FeatureFusion(20, 6, 5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        fuse_features(Tensor(np.ones((1, 4, 5))), Tensor(np.ones((1, 6))), fusion, "train")
    with pytest.raises(ValueError):
        fuse_features(Tensor(np.ones((2, 4, 5))), Tensor(np.ones((2, 6))), fusion, "test")
    with pytest.raises(ShapeError):
        fuse_features(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((2, 6))), fusion, "train")


def test_zero_branches_fuse_to_zero():
    fusion = FeatureFusion(20, 6, 5, np.random.default_rng(0))
    for p in (fusion.tem.weight, fusion.tem.bias, fusion.spa.weight, fusion.spa.bias):
        p.data[...] = 0.0
    out = fuse_features(Tensor(np.random.default_rng(0).standard_normal((3, 4, 5))), Tensor(np.ones((3, 6))), fusion)
    assert not out.data.any()


def test_without_fusion_spatial_features_feed_both_heads():
    model = small_model(fim=False, fuse_dim=8)
    assert isinstance(model.extractor.fusion, SpatialProjection)
    assert model.extractor.out_dim == 16
    xs, ys, xt = batch(4)
    assert dann_loss(model, xs, ys, xt).l_d.item() > 0
    model.eval()
    assert model.emotion_logits(Tensor(xs)).shape == (4,)


# -- training -------------------------------------------------------------------

def tiny_domains(seed=0):
    rng = np.random.default_rng(seed)
    source = WindowSet(rng.standard_normal((10, 32, 768)), np.arange(10) % 2, np.array(["S01"] * 10))
    return source, rng.standard_normal((6, 32, 768)) + 0.5


def test_train_dann_takes_no_target_labels():
    params = inspect.signature(train_dann).parameters
    assert "target_X" in params
    assert not [name for name in params if "target" in name and name != "target_X"]


def test_train_dann_trace_and_determinism(tmp_path):
    source, xt = tiny_domains()
    digests = []
    for _ in range(2):
        student = Student(SMALL, rng=np.random.default_rng(0))
        d = train_dann(student, source, xt, Schedule(epochs=2, batch_size=4), seed=3, ramp=True,
                       fuse_dim=4, domain_lr_scale=10.0)
        digests.append(checkpoint.digest(d.model.state_dict()))
    assert digests[0] == digests[1]
    assert [row["epoch"] for row in d.history] == [0, 1]
    assert all(0.0 <= row["domain_acc"] <= 1.0 for row in d.history)
    d.write_csv(tmp_path / "dann.csv")
    header = (tmp_path / "dann.csv").read_text().splitlines()[0]
    assert header == "epoch,L_c,L_d,L,domain_acc,grl_coeff,val_loss,val_acc,target_acc"


def test_frozen_student_is_untouched():
    source, xt = tiny_domains(1)
    student = Student(SMALL, rng=np.random.default_rng(0))
    before = checkpoint.digest(student.state_dict())
    d = train_dann(student, source, xt, Schedule(epochs=1, batch_size=4), fuse_dim=4, freeze_student=True)
    assert checkpoint.digest(student.state_dict()) == before
    assert d.result.epochs_run == 1


def test_train_dann_rejects_empty_target_and_bad_scale():
    source, xt = tiny_domains()
    with pytest.raises(ValueError):
        train_dann(Student(SMALL), source, xt[:0], Schedule(epochs=1, batch_size=4))
    with pytest.raises(ValueError):
        train_dann(Student(SMALL), source, xt, Schedule(epochs=1, batch_size=4), domain_lr_scale=0.0)


def test_export_embeddings_csv(tmp_path):
    model = small_model(fuse_dim=3)
    model.train()
    dann_loss(model, *batch(0))
    source, xt = tiny_domains()
    path = tmp_path / "emb.csv"
    n = export_embeddings(model, source.subset(slice(0, 3)), 0, path)
    n += export_embeddings(model, WindowSet(xt[:2], None, np.array(["S09"] * 2)), 1, path, append=True)
    rows = list(csv.reader(open(path, encoding="utf-8")))
    assert n == 5 and len(rows) == 6
    assert rows[0] == ["subject_id", "domain_label", "emotion_label", "f0", "f1", "f2", "f3", "f4", "f5"]
    assert rows[1][:3] == ["S01", "0", "0"]
    assert rows[-1][:3] == ["S09", "1", ""]
