"""Acceptance gate: one test per release criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. Criterion 9 (real-data
integration) is skipped unless AUTOMR_UCIHAR_DIR points at a directory of
canonical CSV recordings plus schema.json.
"""

import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from automr import ops
from automr.checkpoint import load_checkpoint
from automr.metrics import MetricsReport
from automr.model import BlockConfig, QuartzConfig, build, preset
from automr.pipeline import segment
from automr.rng import rng_for
from automr.schema import stride_from_overlap
from automr.space import FloatDim, ParamSpace, default_space
from automr.synthetic import make_synthetic_dataset, write_synthetic_csvs
from automr.tape import Tape
from automr.trainer import TrainConfig, evaluate, train
from automr.tuner import TrialRecord, manual_grid_study, run_study, suggest

from gradcheck import finite_diff_grad, max_rel_err
from oracles import enumerate_offsets, metrics_oracle, nearest_centroid_accuracy

PRIMITIVE_TOL = 1e-5
FULL_MODEL_TOL = 1e-4


def passed(criterion: int, message: str) -> None:
    print(f"\n[acceptance] criterion {criterion}: PASS — {message}")


def _grad_case(make_output, arrays, upstream_seed):
    """Worst relative error between tape gradients and central differences."""
    tape = Tape()
    out = make_output(tape)
    upstream = np.random.default_rng(upstream_seed).normal(size=out.shape)
    grads = tape.gradients(out, seed=upstream)

    def scalar():
        return float(np.sum(make_output(None) * upstream))

    worst = 0.0
    for arr in arrays:
        numeric = finite_diff_grad(scalar, arr)
        worst = max(worst, max_rel_err(grads[id(arr)], numeric))
    return worst


def test_criterion_1_gradient_correctness():
    """Every primitive and a tiny full model match central finite differences."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    cases = 0
    worst_primitive = 0.0

    def check(make_output, arrays):
        nonlocal cases, worst_primitive
        cases += 1
        err = _grad_case(make_output, arrays, upstream_seed=1000 + cases)
        worst_primitive = max(worst_primitive, err)
        assert err < PRIMITIVE_TOL, f"primitive case {cases}: rel error {err:.2e}"

    from test_ops import conv_inputs, random_conv_spec

    for mode, reps in (("standard", 15), ("depthwise", 10), ("pointwise", 10)):
        for _ in range(reps):
            spec = random_conv_spec(rng, mode)
            x, w, b = conv_inputs(rng, spec, batch=int(rng.integers(1, 4)))
            check(lambda t, x=x, w=w, b=b, s=spec: ops.conv1d(x, w, b, s, t), (x, w, b))

    for train_mode, reps in ((True, 10), (False, 5)):
        for _ in range(reps):
            bsz, c, l = int(rng.integers(2, 5)), int(rng.integers(1, 5)), int(rng.integers(2, 10))
            x = rng.normal(size=(bsz, c, l))
            gamma, beta = rng.normal(1.0, 0.3, c), rng.normal(size=c)
            rm, rv = rng.normal(size=c), rng.uniform(0.5, 2.0, c)
            check(
                lambda t, x=x, g=gamma, b=beta, m=rm, v=rv, tm=train_mode:
                    ops.batchnorm1d(x, g, b, m, v, train=tm, tape=t)[0],
                (x, gamma, beta),
            )

    for _ in range(15):
        x = rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 12))))
        x[np.abs(x) < 0.05] += 0.1  # stay off the kink
        check(lambda t, x=x: ops.relu(x, t), (x,))

    for i in range(10):
        x = rng.normal(size=(2, int(rng.integers(1, 4)), int(rng.integers(1, 12))))
        check(
            lambda t, x=x, i=i: ops.dropout(
                x, 0.3, train=True, rng=np.random.default_rng(900 + i), tape=t
            ),
            (x,),
        )

    for _ in range(10):
        x = rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 12))))
        check(lambda t, x=x: ops.global_avg_pool(x, t), (x,))

    for _ in range(15):
        x = rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(1, 7))))
        w = rng.normal(size=(int(rng.integers(1, 5)), x.shape[1]))
        b = rng.normal(size=w.shape[0])
        check(lambda t, x=x, w=w, b=b: ops.linear(x, w, b, t), (x, w, b))

    for _ in range(5):
        a = rng.normal(size=(2, 3, 5))
        bb = rng.normal(size=(2, 3, 5))
        check(lambda t, a=a, b=bb: ops.add(a, b, t), (a, bb))

    ce_worst = 0.0
    for _ in range(10):
        bsz, c = int(rng.integers(1, 9)), int(rng.integers(2, 11))
        logits = rng.normal(size=(bsz, c))
        targets = rng.integers(0, c, size=bsz)

        def loss_scalar():
            val, _ = ops.softmax_cross_entropy(logits, targets)
            return float(val)

        _, grad = ops.softmax_cross_entropy(logits, targets)
        err = max_rel_err(grad, finite_diff_grad(loss_scalar, logits))
        ce_worst = max(ce_worst, err)
        cases += 1
        assert err < PRIMITIVE_TOL

    assert cases >= 100, f"only {cases} primitive shapes checked"

    # tiny full model: in=2, 1 block, cells=1, ch=4, k=3, classes=3, W=16
    cfg = QuartzConfig(
        in_channels=2, num_classes=3,
        blocks=[BlockConfig(cells=1, channels=4, kernel=3)],
        head_channels=8, dropout=0.0, stem_kernel=3,
    ).validate()
    model = build(cfg, seed=0, dtype=np.float64).eval()
    for name in model.buffers:  # nonzero running stats, eval-mode normalization
        shape = model.buffers[name].shape
        model.buffers[name] = (
            rng.normal(0.0, 0.1, shape) if name.endswith(".mean") else rng.uniform(0.5, 1.5, shape)
        )
    x = rng.normal(size=(2, 2, 16))
    targets = np.array([0, 2])

    def model_loss():
        val, _ = ops.softmax_cross_entropy(model.forward(x), targets)
        return float(val)

    tape = Tape()
    loss, _ = ops.softmax_cross_entropy(model.forward(x, tape=tape), targets, tape=tape)
    grads = tape.gradients(loss)
    model_worst = 0.0
    for name, p in model.params.items():
        err = max_rel_err(grads[id(p)], finite_diff_grad(model_loss, p))
        model_worst = max(model_worst, err)
    assert model_worst < FULL_MODEL_TOL, f"full model rel error {model_worst:.2e}"

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"gradient suite took {elapsed:.1f}s"
    passed(1, f"{cases} primitive shapes (worst {max(worst_primitive, ce_worst):.2e} < 1e-5), "
              f"full model worst {model_worst:.2e} < 1e-4, {elapsed:.1f}s")


def _segment_offsets(length, window, stride):
    rng = np.random.default_rng(0)
    from automr.pipeline import LabeledRecording

    rec = LabeledRecording(
        recording_id="r",
        data=rng.normal(size=(2, length)).astype(np.float32),
        labels=np.zeros(length, dtype=np.int32),
    )
    return [start for _, _, start in segment(rec, window, stride)]


def test_criterion_2_windowing_oracle():
    """segment() offsets equal brute-force enumeration on 200 random triples."""
    rng = np.random.default_rng(77)
    checked = 0
    for _ in range(200):
        window = int(rng.integers(1, 40))
        choice = rng.random()
        if choice < 0.2:
            stride = window  # S = W
        elif choice < 0.4:
            stride = 1  # S = 1
        else:
            stride = int(rng.integers(1, window + 1))
        if rng.random() < 0.2:
            length = int(rng.integers(0, window))  # L < W
        else:
            length = int(rng.integers(0, 120))
        assert _segment_offsets(length, window, stride) == enumerate_offsets(
            length, window, stride
        ), f"(L={length}, W={window}, S={stride})"
        checked += 1
    passed(2, f"{checked} random (L, W, S) triples match enumeration exactly")


def test_criterion_3_windowing_parameter_conformance():
    """The three stock windowing configurations produce exactly the enumerated sets."""
    configs = [
        ("25-sample window, half overlap", 25, stride_from_overlap(25, overlap_fraction=0.5)),
        ("128-sample window, stride 64", 128, 64),
        ("15-sample window, 7 overlap", 15, stride_from_overlap(15, overlap_samples=7)),
    ]
    assert [s for _, _, s in configs] == [12, 64, 8]
    for name, window, stride in configs:
        for length in (window - 1, window, window + 1, 31, 100, 256, 1000):
            assert _segment_offsets(length, window, stride) == enumerate_offsets(
                length, window, stride
            ), f"{name} at L={length}"
    passed(3, "strides 12/64/8 derived and window sets equal enumeration")


def _train_until(dataset, target, seed, out_dir, total_epochs=30, chunk=5):
    """Train in resumable chunks, stopping once the target accuracy is reached.

    Chunked training is trajectory-identical to a straight run (criterion 6),
    so 'reached within total_epochs' is decided exactly.
    """
    cfg = TrainConfig(
        epochs=total_epochs, batch_size=32, learning_rate=1e-3, seed=seed
    )
    model = build(preset("base", dataset.num_channels, dataset.schema.num_classes), seed=seed)
    resume = None
    state = None
    for stop in range(chunk, total_epochs + 1, chunk):
        state, _ = train(model, dataset, cfg, out_dir=out_dir, resume=resume, stop_epoch=stop)
        if state.best_metric >= target:
            return state.best_metric, stop
        resume = load_checkpoint(Path(out_dir) / "last.ckpt").state
    return state.best_metric, total_epochs


def test_criterion_4_synthetic_convergence(tmp_path):
    """Preset base reaches 95% test accuracy on the synthetic sinusoids."""
    t0 = time.perf_counter()
    dataset = make_synthetic_dataset(seed=11)
    oracle_acc = nearest_centroid_accuracy(dataset)
    assert oracle_acc >= 0.90, f"separability oracle scored only {oracle_acc:.3f}"

    reached = []
    for seed in range(5):
        best, epochs_used = _train_until(dataset, 0.95, seed, tmp_path / f"seed{seed}")
        reached.append(best >= 0.95)
        print(f"  seed {seed}: best test accuracy {best:.4f} within {epochs_used} epochs")
    elapsed = time.perf_counter() - t0
    assert sum(reached) >= 4, f"only {sum(reached)}/5 seeds reached 0.95"
    assert elapsed < 300.0, f"convergence suite took {elapsed:.1f}s"
    passed(4, f"oracle {oracle_acc:.2f}, {sum(reached)}/5 seeds >= 0.95, {elapsed:.0f}s")


def test_criterion_5_metrics_oracle():
    """MetricsReport equals the counting oracle exactly on 100 random vectors."""
    rng = np.random.default_rng(99)
    for _ in range(100):
        c = int(rng.integers(2, 11))
        n = int(rng.integers(1, 1001))
        labels = rng.integers(0, c, size=n)
        preds = rng.integers(0, c, size=n)
        report = MetricsReport.from_predictions(labels, preds, c)
        cm, acc, prec, rec, f1, mp, mr, mf1 = metrics_oracle(labels.tolist(), preds.tolist(), c)
        assert report.confusion.tolist() == cm
        assert report.accuracy == acc
        assert report.precision.tolist() == prec
        assert report.recall.tolist() == rec
        assert report.f1.tolist() == f1
        assert (report.macro_precision, report.macro_recall, report.macro_f1) == (mp, mr, mf1)
    passed(5, "100 random prediction vectors match the counting oracle exactly")


def test_criterion_6_checkpoint_determinism(tmp_path):
    """Save at epoch 5, resume for 5 == straight 10: identical final loss bits."""
    dataset = make_synthetic_dataset(seed=13, train_per_class=10, test_per_class=3,
                                     window_length=32)
    cfg = TrainConfig(epochs=10, batch_size=32, seed=4)

    def small_model():
        config = QuartzConfig(
            in_channels=3, num_classes=3,
            blocks=[BlockConfig(cells=1, channels=8, kernel=3)],
            head_channels=8, dropout=0.1, stem_kernel=3,
        ).validate()
        return build(config, seed=4)

    straight_model = small_model()
    _, straight = train(straight_model, dataset, cfg)

    chunk_model = small_model()
    _, first = train(chunk_model, dataset, cfg, out_dir=tmp_path, stop_epoch=5)
    loaded = load_checkpoint(tmp_path / "last.ckpt")
    assert loaded.state.epoch == 5
    resumed_model = small_model()
    _, second = train(resumed_model, dataset, cfg, resume=loaded.state)

    final_straight = straight[-1].train.loss
    final_resumed = second[-1].train.loss
    assert final_straight == final_resumed, (
        f"final losses differ: {final_straight!r} vs {final_resumed!r}"
    )
    assert [r.train.loss for r in first + second] == [r.train.loss for r in straight]
    for k in straight_model.params:
        assert straight_model.params[k].tobytes() == resumed_model.params[k].tobytes()
    passed(6, f"final loss {final_straight:.6f} identical to the last bit after resume")


def test_criterion_7_tuner_efficacy():
    """SMBO on the analytic log-quadratic beats the grid-top-5% bar and random search."""
    t0 = time.perf_counter()

    def objective(lr):
        return -((math.log10(lr) + 3.0) ** 2)

    space = ParamSpace([FloatDim("lr", 1e-5, 1e-1, log=True)])
    grid = np.logspace(-5, -1, 1000)
    top5_threshold = np.quantile([objective(v) for v in grid], 0.95)

    hits, wins = 0, 0
    smbo_regrets, random_regrets = [], []
    for seed in range(10):
        history = []
        for i in range(24):
            config = suggest(history, space, seed)
            history.append(
                TrialRecord(i, config, float(objective(config["lr"])), 1, seed, "ok", 0.0)
            )
        smbo_best = max(t.objective for t in history)
        rng = rng_for(seed, "pure-random")
        random_best = max(float(objective(space.sample(rng)["lr"])) for _ in range(24))
        hits += smbo_best >= top5_threshold
        wins += (0.0 - smbo_best) <= (0.0 - random_best)
        smbo_regrets.append(0.0 - smbo_best)
        random_regrets.append(0.0 - random_best)

    elapsed = time.perf_counter() - t0
    assert hits >= 8, f"top-5% hits {hits}/10"
    assert wins >= 7, f"regret wins {wins}/10"
    assert float(np.median(smbo_regrets)) <= float(np.median(random_regrets))
    assert elapsed < 120.0, f"tuner suite took {elapsed:.1f}s"
    passed(7, f"top-5% in {hits}/10 seeds, regret <= random in {wins}/10, "
              f"median regret {np.median(smbo_regrets):.2e} vs {np.median(random_regrets):.2e}, "
              f"{elapsed:.0f}s")


def _cli(args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "automr", *args],
        cwd=cwd, capture_output=True, text=True, timeout=300,
    )


def test_criterion_8_end_to_end_smoke(tmp_path):
    """prepare -> tune(2x2) -> export -> train(3) -> evaluate -> report, exit 0, < 120 s."""
    t0 = time.perf_counter()
    raw = tmp_path / "raw"
    schema_path = write_synthetic_csvs(raw, seed=0)
    ds = tmp_path / "ds.awd"
    store = tmp_path / "study.ndjson"
    exported = tmp_path / "best.json"
    run_dir = tmp_path / "run"

    chain = [
        ["prepare", "--schema", str(schema_path), "--input", str(raw),
         "--output", str(ds), "--seed", "42"],
        ["tune", "--data", str(ds), "--trials", "2", "--epochs-per-trial", "2",
         "--seed", "0", "--store", str(store), "--export", str(exported)],
        ["train", "--data", str(ds), "--config", str(exported), "--epochs", "3",
         "--out", str(run_dir)],
        ["evaluate", "--checkpoint", str(run_dir / "best.ckpt"), "--data", str(ds)],
        ["report", "--run", str(run_dir)],
    ]
    for args in chain:
        result = _cli(args, tmp_path)
        assert result.returncode == 0, (
            f"`automr {args[0]}` exited {result.returncode}:\n{result.stdout}\n{result.stderr}"
        )
    elapsed = time.perf_counter() - t0
    assert (run_dir / "report" / "report.md").exists()
    assert elapsed < 120.0, f"smoke chain took {elapsed:.1f}s"
    passed(8, f"full chain exit 0 in {elapsed:.0f}s")


@pytest.mark.skipif(
    "AUTOMR_UCIHAR_DIR" not in os.environ,
    reason="set AUTOMR_UCIHAR_DIR to a directory of canonical CSVs + schema.json",
)
def test_criterion_9_real_data_integration(tmp_path):
    """Optional: user-supplied smartphone HAR data, 12x15 auto-tune, accuracy >= 0.90."""
    from automr.pipeline import prepare as prepare_pipeline
    from automr.schema import DatasetSchema
    from automr.space import config_to_model, config_to_train

    t0 = time.perf_counter()
    data_dir = Path(os.environ["AUTOMR_UCIHAR_DIR"])
    schema = DatasetSchema.load(data_dir / "schema.json")
    assert schema.window_length == 128 and schema.window_stride == 64
    dataset, _ = prepare_pipeline(data_dir, schema, seed=0)

    store = tmp_path / "ucihar.ndjson"
    space = default_space(dataset.num_channels)
    best = run_study(dataset, space, n_trials=12, epochs_per_trial=15, seed=0,
                     store_path=store)
    model_cfg = config_to_model(best.config, dataset.num_channels, schema.num_classes)
    train_cfg = config_to_train(best.config, epochs=30, seed=0)
    model = build(model_cfg, seed=0)
    state, _ = train(model, dataset, train_cfg)
    model.load_arrays(state.params, state.buffers)
    report = evaluate(model, dataset, "test")
    elapsed = time.perf_counter() - t0
    assert report.accuracy >= 0.90, f"test accuracy {report.accuracy:.4f}"
    assert elapsed < 2 * 3600
    passed(9, f"real-data accuracy {report.accuracy:.4f} >= 0.90 in {elapsed / 60:.0f} min")


def test_criterion_10_ablation_harness_parity(tmp_path):
    """Manual batch-size grid and auto study both complete; the comparison
    report renders the four-metric layout for both runs."""
    dataset = make_synthetic_dataset(seed=21, train_per_class=20, test_per_class=6,
                                     window_length=32)
    ds_path = tmp_path / "ds.awd"
    dataset.save(ds_path)
    space = default_space(dataset.num_channels)

    auto_best = run_study(dataset, space, n_trials=3, epochs_per_trial=1, seed=5,
                          store_path=tmp_path / "auto.ndjson")
    grid_best = manual_grid_study(dataset, space, "batch_size", epochs_per_trial=1,
                                  seed=5, store_path=tmp_path / "grid.ndjson")
    grid_lines = (tmp_path / "grid.ndjson").read_text().splitlines()
    assert len(grid_lines) == 1 + 4  # header + {32, 64, 128, 256}
    assert {json.loads(l)["config"]["batch_size"] for l in grid_lines[1:]} == {32, 64, 128, 256}

    runs = {}
    for label, best in (("auto", auto_best), ("manual", grid_best)):
        run_dir = tmp_path / f"run-{label}"
        code = _run_training(dataset, best.config, run_dir, seed=5)
        assert code == 0
        runs[label] = run_dir

    result = _cli([
        "report", "--run", str(runs["auto"]), "--compare", str(runs["manual"]),
        "--labels", "auto,manual",
    ], tmp_path)
    assert result.returncode == 0, result.stderr
    report_md = (runs["auto"] / "report" / "report.md").read_text()
    assert "| Run | Accuracy | Precision | Recall | F1-Score |" in report_md
    assert "auto" in report_md and "manual" in report_md
    assert "## Comparison (test split)" in report_md
    passed(10, "grid and auto studies completed; comparison table rendered")


def _run_training(dataset, config, run_dir, seed):
    """Train a tuned config through the CLI-facing modules (2 quick epochs)."""
    from automr.cli import dispatch
    from automr.space import config_to_model, config_to_train

    ds_path = run_dir.parent / "ds.awd"
    merged = {
        "model": config_to_model(config, dataset.num_channels,
                                 dataset.schema.num_classes).to_dict(),
        "train": config_to_train(config, epochs=2, seed=seed).to_dict(),
    }
    cfg_path = run_dir.parent / f"{run_dir.name}-config.json"
    cfg_path.write_text(json.dumps(merged))
    return dispatch([
        "train", "--data", str(ds_path), "--config", str(cfg_path),
        "--epochs", "2", "--out", str(run_dir),
    ])
