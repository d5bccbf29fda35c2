"""End-to-end acceptance criteria; each test records one PASS/FAIL line."""

import json
import math
import time

import numpy as np
from PIL import Image

from conftest import write_corpus
from msgsynth import classifier as classifier_mod
from msgsynth.audit import audit_shapes
from msgsynth.autodiff import Tensor, minibatch_stddev
from msgsynth.classifier import TransferConfig, apply_transfer, build_classifier, predict, train_classifier
from msgsynth.cli import main
from msgsynth.data import ingest_directory, make_split
from msgsynth.gan_train import GanTrainingConfig, TrainState, generate_images, gradient_penalty, train_gan, wgan_losses
from msgsynth.gradcheck_suite import OP_TOLERANCE, PENALTY_TOLERANCE, _mlp_penalty_case, check_grad, op_cases
from msgsynth.msggan import GeneratorSpec
from msgsynth.report import ConfusionMatrix, compute_metrics, reference_report, render_markdown


def test_criterion_01_shape_conformance(criterion):
    t0 = time.perf_counter()
    full = audit_shapes(9)
    study = audit_shapes(5, execute=True)
    elapsed = time.perf_counter() - t0
    cells = {(r.network, r.operation, r.actual) for r in full}
    required = [("discriminator", "MiniBatchStd", "17x1024x1024"),
                ("discriminator", "Concat/phi_simple", "259x64x64"),
                ("discriminator", "Concat/phi_simple", "515x8x8"),
                ("discriminator", "Conv 4x4", "512x1x1")]
    last_rgb = [r for r in study if r.network == "generator" and r.operation == "ToRGB"][-1]
    ok = (all(r.ok for r in full + study) and all(c in cells for c in required)
          and last_rgb.actual == "3x64x64" and elapsed < 10)
    criterion(1, ok, f"depth 9: {sum(r.ok for r in full)}/{len(full)} rows, depth 5: "
                     f"{sum(r.ok for r in study)}/{len(study)} rows, finest {last_rgb.actual}, {elapsed:.1f}s")
    assert ok


def test_criterion_02_gradient_correctness(criterion):
    t0 = time.perf_counter()
    op_errors = {name: check_grad(fn, arrays) for name, fn, arrays in op_cases(seed=0)}
    fn, params = _mlp_penalty_case(seed=0)
    gp_error = check_grad(fn, params, allow_unused=True)
    elapsed = time.perf_counter() - t0
    worst = max(op_errors, key=op_errors.get)
    ok = max(op_errors.values()) < OP_TOLERANCE and gp_error < PENALTY_TOLERANCE and elapsed < 120
    criterion(2, ok, f"{len(op_errors)} ops, worst {worst} {op_errors[worst]:.1e} (<1e-6); "
                     f"penalty double-backprop {gp_error:.1e} (<1e-4); {elapsed:.1f}s")
    assert ok


def test_criterion_03_analytic_losses(criterion):
    rng = np.random.default_rng(0)
    real = [Tensor(rng.standard_normal((6, 3, 4, 4))), Tensor(rng.standard_normal((6, 3, 8, 8)))]
    fake = [Tensor(rng.standard_normal(r.shape)) for r in real]
    w = [rng.standard_normal(r.shape[1:]) for r in real]
    norm = math.sqrt(sum((v ** 2).sum() for v in w))
    w = [Tensor(v / norm) for v in w]

    def critic(xs):
        return sum((x * wi).reshape(x.shape[0], -1).sum(axis=1, keepdims=True) for x, wi in zip(xs, w))

    gp = gradient_penalty(critic, real, fake, 10.0, rng).item()
    d_loss, g_loss = wgan_losses(Tensor(np.array([[1.0]])), Tensor(np.array([[0.2]])), 0.0)
    ok = (abs(gp) < 1e-10 and abs(d_loss.item() + 0.8) < 1e-15 and abs(g_loss.item() + 0.2) < 1e-15)
    criterion(3, ok, f"unit linear critic penalty {gp:.1e}; d_loss {d_loss.item()!r}, g_loss {g_loss.item()!r}")
    assert ok


def test_criterion_04_minibatch_stddev(criterion):
    eps = 1e-8
    same = np.repeat(np.random.default_rng(0).standard_normal((1, 4, 3, 3)), 5, axis=0)
    appended = minibatch_stddev(Tensor(same), eps=eps).data[:, -1]
    pair = np.stack([np.zeros((1, 2, 2)), np.full((1, 2, 2), 2.0)])
    exact = minibatch_stddev(Tensor(pair), eps=0.0).data[:, -1]
    ok = appended.max() <= math.sqrt(eps) and np.all(exact == 1.0)
    criterion(4, ok, f"identical batch channel max {appended.max():.2e} (<= {math.sqrt(eps):.0e}); "
                     f"{{0,2}} case {np.unique(exact).tolist()}")
    assert ok


def test_criterion_05_split_arithmetic(criterion, tmp_path):
    buf = tmp_path / "one.png"
    Image.fromarray(np.zeros((2, 2, 3), np.uint8)).save(buf)
    payload = buf.read_bytes()
    root = tmp_path / "corpus"
    for label in (0, 1):
        d = root / str(label)
        d.mkdir(parents=True)
        for i in range(78_000):
            (d / f"{i:06d}.png").write_bytes(payload)
    t0 = time.perf_counter()
    ds = ingest_directory(root)
    plan = make_split(ds, seed=0)
    elapsed = time.perf_counter() - t0
    got = (ds.counts[0], ds.counts[1], len(plan.gan_pool), len(plan.cls_pool), len(plan.train), len(plan.test))
    ok = got == (78_000, 78_000, 80_000, 76_000, 53_200, 22_800) and not set(plan.gan_pool) & set(plan.cls_pool)
    criterion(5, ok, "ingested {}+{}, gan_pool {}, cls_pool {}, train/test {}/{}".format(*got)
              + f" ({elapsed:.0f}s)")
    assert ok


PROBE_SEEDS = (0, 1, 2, 3, 4)
PROBE_STEPS = 500  # fixed budget per seed, well inside the 2,000-step limit
PROBE_COLOR = (230, 180, 200)


def test_criterion_06_gan_probe(criterion):
    color = np.array(PROBE_COLOR) / 127.5 - 1.0
    data = np.broadcast_to(color[None, :, None, None], (64, 3, 8, 8)).astype(np.float32).copy()
    spec = GeneratorSpec(depth=2, latent_dim=16, channels=(16, 16))
    cfg = GanTrainingConfig(batch_size=16)
    t0 = time.perf_counter()
    before, after = [], []
    for seed in PROBE_SEEDS:
        state = TrainState.create(spec, seed=seed)
        before.append(abs(generate_images(state.generator, 256, seed=99).mean() - data.mean()))
        train_gan(state, data, cfg, PROBE_STEPS)
        after.append(abs(generate_images(state.generator, 256, seed=99).mean() - data.mean()))
    elapsed = time.perf_counter() - t0
    passing = sum(d < 0.1 for d in after)
    ok = passing >= 3 and elapsed < 600
    criterion(6, ok, f"{passing}/5 seeds under 0.1 after {PROBE_STEPS} steps; |mean diff| "
                     f"{[round(float(d), 3) for d in before]} -> {[round(float(d), 3) for d in after]}; "
                     f"{elapsed:.0f}s")
    assert ok


def test_criterion_07_transfer_freeze(criterion, monkeypatch):
    rng = np.random.default_rng(0)
    images = rng.uniform(-1, 1, (20, 3, 32, 32)).astype(np.float32)
    labels = np.array([0, 1] * 10)
    cfg = TransferConfig(input_size=32, batch_size=4, seed=0)
    net = apply_transfer(build_classifier(cfg.resnet_spec(), seed=0), cfg)
    before = {k: v.copy() for k, v in net.state_arrays().items()}
    steps = []
    real_step = classifier_mod.adam_step
    monkeypatch.setattr(classifier_mod, "adam_step", lambda *a, **k: (steps.append(1), real_step(*a, **k)))
    train_classifier(net, images, labels, cfg, epochs=10)
    after = net.state_arrays()
    backbone_same = all(np.array_equal(before[k], after[k]) for k in before if not k.startswith("fc."))
    head_changed = all(not np.array_equal(before[k], after[k]) for k in before if k.startswith("fc."))
    n_backbone = sum(1 for k in before if not k.startswith("fc."))
    ok = len(steps) == 50 and backbone_same and head_changed
    criterion(7, ok, f"{len(steps)} steps; {n_backbone} backbone arrays bit-identical: {backbone_same}; "
                     f"head changed: {head_changed}")
    assert ok


def test_criterion_08_classifier_sanity(criterion):
    rng = np.random.default_rng(0)
    labels = np.array([0, 1] * 16)
    images = (np.where(labels[:, None, None, None] == 1, 0.5, -0.5)
              + rng.normal(0, 0.2, (32, 3, 32, 32))).astype(np.float32)
    cfg = TransferConfig(epochs=20, input_size=32, freeze_backbone=False, batch_size=8, seed=0)
    runs = []
    for _ in range(2):
        net = apply_transfer(build_classifier(cfg.resnet_spec(), seed=0), cfg)
        net, curve = train_classifier(net, images, labels, cfg)
        pred, probs = predict(net, images)
        runs.append((curve, pred, probs))
    acc = float((runs[0][1] == labels).mean())
    deterministic = runs[0][0] == runs[1][0] and np.array_equal(runs[0][2], runs[1][2])
    ok = acc >= 0.95 and deterministic
    criterion(8, ok, f"train accuracy {acc:.3f} after 20 epochs; final loss {runs[0][0][-1]:.4f}; "
                     f"identical reruns: {deterministic}")
    assert ok


def test_criterion_09_metrics_oracle(criterion):
    rng = np.random.default_rng(0)
    labels, preds = rng.integers(0, 2, 1000), rng.integers(0, 2, 1000)
    row = compute_metrics(ConfusionMatrix.from_predictions(labels, preds))
    per = {}
    for c in (0, 1):
        tp = int(np.sum((labels == c) & (preds == c)))
        fp = int(np.sum((labels != c) & (preds == c)))
        fn = int(np.sum((labels == c) & (preds != c)))
        p, r = tp / (tp + fp), tp / (tp + fn)
        per[c] = (p, r, 2 * p * r / (p + r))
    expected = (float(np.mean(labels == preds)), *((per[0][i] + per[1][i]) / 2 for i in range(3)))
    got = (row.accuracy, row.precision, row.recall, row.f1)
    worst = max(abs(a - b) for a, b in zip(got, expected))
    hand = compute_metrics(ConfusionMatrix(tp=3, fp=1, fn=2, tn=4)).per_class["1"]
    hand_ok = (abs(hand["precision"] - 0.75) < 1e-12 and abs(hand["recall"] - 0.6) < 1e-12
               and round(hand["f1"], 4) == 0.6667)
    ok = worst < 1e-12 and hand_ok
    criterion(9, ok, f"max deviation from recount {worst:.1e}; hand case "
                     f"{hand['precision']:.2f}/{hand['recall']:.2f}/{hand['f1']:.4f}")
    assert ok


def test_criterion_10_reproducibility(criterion, tmp_path):
    real = write_corpus(tmp_path / "real", 50, seed=1)
    synth = write_corpus(tmp_path / "synth", 50, seed=2, colors=((120, 70, 150), (200, 120, 160)))
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("input_size = 16\nwidths = 8,8,16,16\nepochs = 3\npretrain_epochs = 1\n")
    reports = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["split", "--data", str(real), "--scale", "--out", str(out)]) == 0
        assert main(["experiment-matrix", "--real", str(real), "--synth", str(synth), "--split",
                     str(out / "split.csv"), "--config", str(cfg), "--out", str(out)]) == 0
        reports.append(((out / "report.json").read_bytes(), (out / "report.csv").read_bytes()))
    same_report = reports[0] == reports[1]

    images = np.clip(np.random.default_rng(0).normal(0.2, 0.3, (16, 3, 8, 8)), -1, 1).astype(np.float32)
    spec = GeneratorSpec(depth=2, latent_dim=8, channels=(8, 8))
    gcfg = GanTrainingConfig(batch_size=4)
    straight = TrainState.create(spec, seed=0)
    train_gan(straight, images, gcfg, 5)
    straight.save(tmp_path / "mid")
    train_gan(straight, images, gcfg, 10)
    resumed = TrainState.from_checkpoint(tmp_path / "mid")
    train_gan(resumed, images, gcfg, 10)
    a, b = straight.arrays(), resumed.arrays()
    same_gan = (a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
                and straight.rng.bit_generator.state == resumed.rng.bit_generator.state)
    ok = same_report and same_gan
    criterion(10, ok, f"200-image matrix reports byte-identical: {same_report}; "
                      f"resumed GAN bit-identical after 10 steps: {same_gan}")
    assert ok


def test_criterion_11_reference_table_and_pipeline(criterion, tmp_path, capsys):
    md = render_markdown(reference_report())
    rows_ok = all(line in md for line in (
        "| Real/Real | 0.84 | 0.84 | 0.84 | 0.84 |",
        "| Synthetic/Synthetic | 0.99 | 0.98 | 0.98 | 0.98 |",
        "| Real/Synthetic | 0.81 | 0.82 | 0.78 | 0.78 |",
        "| Synthetic/Real | 0.76 | 0.77 | 0.76 | 0.76 |"))

    t0 = time.perf_counter()
    real = write_corpus(tmp_path / "real", 200, seed=3)
    out, synth = tmp_path / "run", tmp_path / "synth"
    split = out / "split.csv"
    steps = [["split", "--data", str(real), "--scale", "--out", str(out)]]
    for cls in ("pos", "neg"):
        steps.append(["train-gan", "--class", cls, "--data", str(real), "--split", str(split), "--depth", "2",
                      "--channels", "16,16", "--latent-dim", "16", "--steps", "150", "--out", str(out)])
    for cls in ("pos", "neg"):
        steps.append(["generate", "--checkpoint", str(out / f"gan_{cls}" / "checkpoint"), "--count", "97",
                      "--class", cls, "--out", str(synth)])
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("input_size = 32\nepochs = 10\npretrain_epochs = 2\n")
    steps.append(["experiment-matrix", "--real", str(real), "--synth", str(synth), "--split", str(split),
                  "--config", str(cfg), "--out", str(out)])
    codes = [main(argv) for argv in steps]
    elapsed = time.perf_counter() - t0
    capsys.readouterr()

    report = json.loads((out / "report.json").read_text())
    rows = report["rows"]
    structure_ok = (
        codes == [0] * len(steps)
        and [r["scenario"] for r in rows] == ["Real/Real", "Synthetic/Synthetic", "Real/Synthetic", "Synthetic/Real"]
        and all(0.0 <= r[m] <= 1.0 for r in rows for m in ("accuracy", "precision", "recall", "f1"))
        and all(sum(r["confusion"].values()) == r["test_size"] for r in rows)
        and all((out / "scenarios" / s / "seed_0" / "manifest.txt").is_file()
                for s in ("real_real", "synthetic_synthetic", "real_synthetic", "synthetic_real"))
        and (out / "report.md").is_file() and (out / "report.csv").is_file()
    )
    ok = rows_ok and structure_ok and elapsed < 900
    summary = ", ".join(f"{r['scenario']} acc {r['accuracy']:.2f}" for r in rows)
    criterion(11, ok, f"reference rows rendered: {rows_ok}; 400-image pipeline exit codes {codes}, "
                      f"{summary}; {elapsed:.0f}s")
    assert ok
