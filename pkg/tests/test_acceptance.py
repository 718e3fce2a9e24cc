"""Exit criteria for the package, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
Training-based criteria share sweeps through module-scoped fixtures.
"""

import copy
import filecmp
import math
import time

import numpy as np
import pytest

from gradcheck import GRAD_FLOOR, numeric_grad, relative_error
from oracles import brute_dtacc, brute_tnr_at_tpr95
from isomax_lab import experiment as exp
from isomax_lab.datasets import write_idx_images, write_idx_labels
from isomax_lab.loss_heads import (
    IsoMaxHead,
    SoftMaxHead,
    isomax_distances,
    isomax_loss,
    isomax_probabilities,
    softmax_loss,
)
from isomax_lab.ood_metrics import detection_report

SCALES = (1.0, 3.0, 10.0)
SEEDS = (0, 1, 2)


def by_head(records):
    return {r.run_id.split("_", 1)[1]: r for r in records}


def metric(record, score, out_data, name):
    for m in record.metrics:
        if m.score == score and m.out_data == out_data:
            return getattr(m.report, name)
    raise KeyError((score, out_data))


@pytest.fixture(scope="module")
def blob_sweeps():
    sweeps, seconds = {}, {}
    for seed in SEEDS:
        start = time.perf_counter()
        sweeps[seed] = by_head(exp.sweep(exp.ExperimentConfig(seed=seed), SCALES, write=False))
        seconds[seed] = time.perf_counter() - start
    return sweeps, seconds


@pytest.fixture(scope="module")
def digits_idx(tmp_path_factory):
    datasets = pytest.importorskip("sklearn.datasets")
    x, y = datasets.load_digits(return_X_y=True)
    pixels = np.clip(np.round(x * 255.0 / 16.0), 0, 255).astype(np.uint8).reshape(-1, 8, 8)
    order = np.random.default_rng(0).permutation(len(y))
    train, test = order[:1200], order[1200:]
    root = tmp_path_factory.mktemp("digits")
    write_idx_images(root / "train-images.idx", pixels[train])
    write_idx_labels(root / "train-labels.idx", y[train])
    write_idx_images(root / "test-images.idx", pixels[test])
    write_idx_labels(root / "test-labels.idx", y[test])
    return exp.ExperimentConfig(
        dataset="idx",
        idx_train_images=str(root / "train-images.idx"),
        idx_train_labels=str(root / "train-labels.idx"),
        idx_test_images=str(root / "test-images.idx"),
        idx_test_labels=str(root / "test-labels.idx"),
        idx_in_classes=(0, 1, 2, 3, 4),
    )


@pytest.fixture(scope="module")
def digits_sweeps(digits_idx):
    return {
        seed: by_head(exp.sweep(digits_idx.replace(seed=seed), (10.0,), write=False))
        for seed in SEEDS
    }


# 1 -------------------------------------------------------------------------


def test_c1_gradient_oracle(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = {"softmax": 0.0, "isomax": 0.0}
    count = {"softmax": 0, "isomax": 0}
    floored = 0
    for _ in range(100):
        b, c, d = rng.integers(1, 5), rng.integers(2, 7), rng.integers(1, 6)
        f = rng.normal(size=(b, d)) * rng.uniform(0.1, 3.0)
        t = rng.integers(0, c, b)

        soft = SoftMaxHead(rng.normal(size=(c, d)), rng.normal(size=c))
        res = softmax_loss(soft, f, t)
        obj = lambda: softmax_loss(soft, f, t).loss
        errs = [
            relative_error(res.grad_features, numeric_grad(obj, f)),
            relative_error(res.grad_head_params["weights"], numeric_grad(obj, soft.weights)),
            relative_error(res.grad_head_params["biases"], numeric_grad(obj, soft.biases)),
        ]
        worst["softmax"] = max(worst["softmax"], *errs)
        count["softmax"] += 1

        iso = IsoMaxHead(rng.normal(size=(c, d)), rng.choice([1.0, 3.0, 10.0]))
        res = isomax_loss(iso, f, t)
        obj = lambda: isomax_loss(iso, f, t).loss
        pairs = [
            (res.grad_features, numeric_grad(obj, f)),
            (res.grad_head_params["prototypes"], numeric_grad(obj, iso.prototypes)),
        ]
        errs = [relative_error(a, n) for a, n in pairs]
        floored += sum(np.linalg.norm(a) + np.linalg.norm(n) < GRAD_FLOOR for a, n in pairs)
        worst["isomax"] = max(worst["isomax"], *errs)
        count["isomax"] += 1
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 10.0 and min(count.values()) >= 100
    criterion(ok, f"instances={count} max_rel_err={worst} (<1e-4; {floored} near-zero "
                  f"gradients compared against abs 1e-8) runtime={elapsed:.2f}s (<10s)")


# 2 -------------------------------------------------------------------------


def test_c2_closed_form_losses(criterion):
    head = IsoMaxHead([[1.0, 0.0], [0.0, 2.0]], entropic_scale=1.0)
    d = isomax_distances(head, [[0.0, 0.0]])
    loss = isomax_loss(head, [[0.0, 0.0]], [0]).loss
    expected = math.log1p(math.exp(-1.0))
    fixture_ok = abs(loss - expected) <= 1e-9 and np.allclose(d, [[1.0, 2.0]])

    rng = np.random.default_rng(0)
    c = exp.ExperimentConfig().num_classes
    init_loss = isomax_loss(IsoMaxHead.init(c, 16), rng.normal(size=(64, 16)), rng.integers(0, c, 64)).loss
    # other class counts: -log(fl(1/C)) can sit one ulp from log C
    ulp_ok = all(
        abs(isomax_loss(IsoMaxHead.init(k, 3), rng.normal(size=(5, 3)), rng.integers(0, k, 5)).loss - math.log(k))
        <= math.ulp(math.log(k))
        for k in range(2, 11)
    )
    ok = fixture_ok and init_loss == math.log(c) and ulp_ok
    criterion(ok, f"fixture |loss-log(1+e^-1)|={abs(loss - expected):.2e} (<=1e-9); "
                  f"init loss C={c}: {init_loss!r} == log C {math.log(c)!r}; C=2..10 within 1 ulp: {ulp_ok}")


# 3 -------------------------------------------------------------------------


def test_c3_metric_oracles(criterion):
    rng = np.random.default_rng(99)
    worst_auc = 0.0
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 1001))
        n_in = int(rng.integers(1, n))
        levels = int(rng.integers(2, 60))
        scores = rng.integers(0, levels, n) / levels  # many ties
        flags = np.zeros(n, bool)
        flags[rng.choice(n, n_in, replace=False)] = True
        a, b = scores[flags], scores[~flags]
        rep = detection_report(a, b)
        gt = (a[:, None] > b[None, :]).sum() + 0.5 * (a[:, None] == b[None, :]).sum()
        worst_auc = max(worst_auc, abs(rep.auroc - gt / (a.size * b.size)))
        al, bl = a.tolist(), b.tolist()
        mismatches += rep.dtacc != brute_dtacc(al, bl)
        mismatches += rep.tnr_at_tpr95 != brute_tnr_at_tpr95(al, bl)
    ok = worst_auc <= 1e-9 and mismatches == 0
    criterion(ok, f"200 sets: max |AUROC - pair count|={worst_auc:.2e} (<=1e-9); "
                  f"DTACC/TNR exact mismatches={mismatches}")


# 4 -------------------------------------------------------------------------


def test_c4_entropy_increases_with_scale(blob_sweeps, criterion):
    sweeps, seconds = blob_sweeps
    runs = sweeps[0]
    ent = [runs[f"isomax_es{s:g}"].mean_entropy for s in SCALES]
    increasing = all(x < y for x, y in zip(ent, ent[1:]))
    ok = increasing and seconds[0] < 300
    criterion(ok, "mean inference entropy E_s=1,3,10: "
                  + ", ".join(f"{e:.4f}" for e in ent)
                  + f" strictly increasing={increasing}; sweep runtime={seconds[0]:.1f}s (<300s)")


# 5 -------------------------------------------------------------------------


def ordering_holds(runs, out_data):
    iso, soft = runs["isomax_es10"], runs["softmax"]
    checks = []
    for name in ("auroc", "tnr_at_tpr95"):
        i_es = metric(iso, "entropic", out_data, name)
        s_es = metric(soft, "entropic", out_data, name)
        s_mps = metric(soft, "mps", out_data, name)
        checks.append(i_es > s_es >= s_mps - 0.01)
    gap = metric(iso, "entropic", out_data, "auroc") - metric(soft, "mps", out_data, "auroc")
    return all(checks) and gap >= 0.03, gap


def summarise_ordering(sweeps, out_data):
    results = {seed: ordering_holds(runs, out_data) for seed, runs in sweeps.items()}
    passed = sum(ok for ok, _ in results.values())
    detail = ", ".join(f"seed{s}={'ok' if ok else 'no'}(gap {g:+.3f})" for s, (ok, g) in results.items())
    return passed, detail


def test_c5_ood_ordering_blobs(blob_sweeps, criterion):
    sweeps, _ = blob_sweeps
    passed, detail = summarise_ordering(sweeps, "ring12")
    criterion(passed >= 2, f"blobs vs ring12, IsoMax+ES > SoftMax+ES >= SoftMax+MPS-0.01 and "
                           f"AUROC gap >= 0.03: {passed}/3 seeds [{detail}]")


def test_c5_ood_ordering_idx(digits_sweeps, criterion):
    passed, detail = summarise_ordering(digits_sweeps, "idx_heldout")
    criterion(passed >= 2, f"IDX digits 0-4 vs held-out 5-9: {passed}/3 seeds [{detail}]")


# 6 -------------------------------------------------------------------------


def test_c6_accuracy_parity(blob_sweeps, criterion):
    sweeps, _ = blob_sweeps
    worst = 0.0
    for runs in sweeps.values():
        base = runs["softmax"].test_accuracy
        for s in SCALES:
            worst = max(worst, abs(runs[f"isomax_es{s:g}"].test_accuracy - base))
    criterion(worst <= 0.02, f"max |IsoMax - SoftMax| test accuracy over E_s={SCALES}, "
                             f"seeds={SEEDS}: {100 * worst:.2f} pp (<=2 pp)")


# 7 -------------------------------------------------------------------------


def test_c7_argmax_invariance(criterion):
    cfg = exp.ExperimentConfig(epochs=5)
    _, model = exp.train(cfg, write=False)
    rng = np.random.default_rng(7)
    inputs = rng.normal(size=(1000, cfg.dim)) * rng.uniform(0.5, 15.0, size=(1000, 1))
    feats = model.features(inputs)
    nearest = np.argmin(isomax_distances(model.head, feats), axis=1)
    agree = np.array_equal(np.argmax(isomax_probabilities(model.head, feats), axis=1), nearest)
    agree &= np.array_equal(model.predict(inputs), nearest)
    for scale in (0.1, 1.0, 3.0, 10.0, 100.0):
        head = copy.deepcopy(model.head)
        head.entropic_scale = scale
        agree &= np.array_equal(np.argmax(head.training_probabilities(feats), axis=1), nearest)
    criterion(bool(agree), f"1000 inputs, E_s in (0.1,1,3,10,100): training argmax == inference argmax "
                           f"== nearest prototype: {bool(agree)}")


# 8 -------------------------------------------------------------------------


def test_c8_determinism_and_persistence(tmp_path, criterion):
    base = exp.ExperimentConfig(epochs=4, samples_per_class=200, ring_radii=(12.0, 20.0))
    for sub in ("a", "b"):
        exp.sweep(base.replace(output_dir=str(tmp_path / sub)), SCALES)
    same_csv = all(
        filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)
        for name in ("metrics.csv", "curves.csv")
    )
    same_ckpt = all(
        filecmp.cmp(p, tmp_path / "b" / p.parent.name / "checkpoint.txt", shallow=False)
        for p in (tmp_path / "a").glob("*/checkpoint.txt")
    )
    data = exp.build_data(base)
    round_trip = True
    for ckpt in sorted((tmp_path / "a").glob("*/checkpoint.txt")):
        model = exp.load_checkpoint(ckpt)
        exp.save_checkpoint(model, tmp_path / "again.txt")
        reloaded = exp.load_checkpoint(tmp_path / "again.txt")
        round_trip &= (tmp_path / "again.txt").read_bytes() == ckpt.read_bytes()
        for score in exp.SCORE_NAMES:
            round_trip &= exp.evaluate(model, data.test, data.ood_sets, score) == exp.evaluate(
                reloaded, data.test, data.ood_sets, score
            )
    ok = same_csv and same_ckpt and round_trip
    criterion(ok, f"identical CSVs={same_csv}, identical checkpoints={same_ckpt}, "
                  f"save/load evaluation bit-exact={round_trip}")
