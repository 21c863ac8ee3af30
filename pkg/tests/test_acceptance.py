"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line; the lines are
repeated in the terminal summary. Criteria 4-6 share one 20-epoch training run
on 4000 synthetic trials and take a few hours on a single CPU core."""

import itertools
import time

import numpy as np
import pytest
from conftest import record_criterion
from scipy.stats import rankdata

from aadnet import AADNet, ModelConfig
from aadnet.autodiff import finite_diff_check, load_checkpoint
from aadnet.autodiff import functional as F
from aadnet.container import read_manifest, read_trials
from aadnet.dsp import AUDIO_RATE, RawSignal, preprocess_recording, trial_dims
from aadnet.model import concat_embeddings, format_param_report, param_count
from aadnet.sparsify import FinetuneSchedule, compute_model_mask, finetune, sparsity_report
from aadnet.splits import overlapping_pairs, split_counts, split_dataset
from aadnet.stats import wilcoxon_signed_rank
from aadnet.synth import SynthConfig, generate_dataset, make_trf
from aadnet.training import TrainConfig, build_model, evaluate, median_last_k, train


def check(number, passed, detail):
    record_criterion(number, bool(passed), detail)
    assert passed, detail


# -- 1 ------------------------------------------------------------------------------


def test_criterion_01_dimensions():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    problems = []
    for d in (2, 3, 4, 5):
        secs = d + 2
        eeg = RawSignal(rng.standard_normal((128 * secs, 10)), 128)
        a = RawSignal(rng.standard_normal(22050 * secs), 22050)
        b = RawSignal(rng.standard_normal(22050 * secs), 22050)
        x, sa, sb = preprocess_recording(eeg, a, b, d)
        if x.shape[1:] != (64 * d, 10) or sa.shape[1:] != (50 * d + 1, 257) or sb.shape != sa.shape:
            problems.append(f"d={d}: inputs {x.shape[1:]}, {sa.shape[1:]}")
        if trial_dims(d) != (64 * d, 50 * d + 1):
            problems.append(f"d={d}: trial_dims {trial_dims(d)}")
        m = AADNet(ModelConfig(duration_s=d), seed=0)
        m.eval()
        e, s = m.eeg_embedding(x[:1]), m.audio_embedding(sa[:1])
        j = concat_embeddings(e, s, m.audio_embedding(sb[:1]))
        if (e.shape[1:], s.shape[1:], j.shape[1:]) != ((48, 32), (48, 16), (48, 64)):
            problems.append(f"d={d}: embeddings {e.shape[1:]}, {s.shape[1:]}, {j.shape[1:]}")
    dt = time.perf_counter() - t0
    check(1, not problems and dt < 10, f"dimensions for d=2..5 ({dt:.1f} s < 10 s) {'; '.join(problems)}")


# -- 2 ------------------------------------------------------------------------------


def test_criterion_02_layer_extents():
    t0 = time.perf_counter()
    m = AADNet(seed=0)
    m.eval()
    eeg_t, spec_t = trial_dims(3)
    m(np.zeros((1, eeg_t, 10)), np.zeros((1, spec_t, 257)), np.zeros((1, spec_t, 257)))
    ex = m.trace_extents()
    (c1, p1), (c2, p2), (c3, p3), (c4, p4) = ex["eeg"]
    eeg_time = [c1[0], p1[0], c2[0], p2[0], c3[0], p3[0], c4[0]]
    eeg_elec = [c1[1], p1[1], p2[1], p3[1], p4[1]]
    (a1, q1), (a2, q2), (a3, q3), (a4, q4), (a5, q5) = ex["audio"]
    audio_time = [a1[0], a2[0], a3[0], a4[0], q5[0]]
    audio_freq = [q1[1], q2[1], q3[1], a4[1], q5[1]]
    ok = (eeg_time == [193, 96, 96, 96, 96, 48, 48] and eeg_elec == [10, 10, 5, 1, 1]
          and audio_time == [151, 145, 129, 97, 48] and audio_freq == [257, 64, 32, 32, 16])
    dt = time.perf_counter() - t0
    check(2, ok and dt < 10, f"extents EEG {eeg_time} / {eeg_elec}, audio {audio_time} / {audio_freq} ({dt:.1f} s)")


# -- 3 ------------------------------------------------------------------------------


def _distinct(rng, shape):
    n = int(np.prod(shape))
    return (rng.permutation(n) / n + 0.01 * rng.uniform(size=n)).reshape(shape)


def _gradcheck_cases(seed):
    rng = np.random.default_rng(seed)
    rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2, 2)
    sign = rng.choice([-1.0, 1.0], (5, 4)) * rng.uniform(0.05, 1, (5, 4))
    f, h = 3, 4
    lstm_args = [rng.standard_normal((2, 5, f)), 0.5 * rng.standard_normal((f, 4 * h)),
                 0.5 * rng.standard_normal((h, 4 * h)), 0.5 * rng.standard_normal(4 * h)]
    y = rng.integers(0, 2, 5)
    bn_args = [rng.standard_normal((3, 2, 4, 3)), rng.standard_normal(2), rng.standard_normal(2)]
    return {
        "conv2d (dilated, padded)": (lambda x, w, b: F.conv2d(x, w, b, (2, 1), (2, 2)),
                                     [rng.standard_normal((2, 2, 7, 6)), rng.standard_normal((3, 2, 3, 2)),
                                      rng.standard_normal(3)]),
        "maxpool2d": (lambda x: F.maxpool2d(x, (2, 4)), [_distinct(rng, (2, 2, 7, 9))]),
        "adaptive maxpool": (lambda x: F.adaptive_maxpool_rows(x, 4), [_distinct(rng, (2, 2, 11, 3))]),
        "batchnorm (train)": (lambda x, g, b: F.batchnorm2d(x, g, b, rm.copy(), rv.copy(), True), bn_args),
        "batchnorm (eval)": (lambda x, g, b: F.batchnorm2d(x, g, b, rm.copy(), rv.copy(), False), bn_args),
        "fused bn+dropout+relu": (lambda x, g, b: F.bn_dropout_relu(x, g, b, rm.copy(), rv.copy(), 0.3, True,
                                                                    np.random.default_rng(seed)), bn_args),
        "dropout": (lambda x: F.dropout(x, 0.4, True, np.random.default_rng(seed)), [rng.standard_normal((4, 5))]),
        "relu": (F.relu, [sign]),
        "linear": (F.linear, [rng.standard_normal((3, 5)), rng.standard_normal((5, 4)), rng.standard_normal(4)]),
        "lstm forward": (F.lstm, lstm_args),
        "lstm reverse": (lambda x, a, b, c: F.lstm(x, a, b, c, reverse=True), lstm_args),
        "softmax cross-entropy": (lambda z: F.softmax_cross_entropy(z, y)[0], [rng.standard_normal((5, 2))]),
    }


def test_criterion_03_gradients():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(20):
        for name, (op, args) in _gradcheck_cases(seed).items():
            err = finite_diff_check(op, args, eps=1e-5, seed=seed)
            worst[name] = max(worst.get(name, 0.0), err)
    dt = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    detail = (f"{len(worst)} layer types x 20 seeds, worst rel. error {max(worst.values()):.2e} < 1e-4 "
              f"({dt:.0f} s < 300 s) {bad if bad else ''}")
    check(3, not bad and dt < 300, detail)


# -- 4-6: one synthetic end-to-end run ------------------------------------------------

DENSE_EPOCHS = 20
FINETUNE_EPOCHS = 5


@pytest.fixture(scope="session")
def synthetic_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    info = generate_dataset(SynthConfig(n_trials=4000, duration_s=3, snr_db=-3.0, seed=0), root / "data")
    data = read_trials(info["container"], duration_s=3)
    plan = split_dataset(read_manifest(info["manifest"]))
    t_gen = time.perf_counter() - t0
    cfg = TrainConfig(epochs=DENSE_EPOCHS, seed=0)
    model = build_model(cfg)
    res = train(model, data, plan, cfg, root / "dense")
    t_total = time.perf_counter() - t0
    return {"data": data, "plan": plan, "cfg": cfg, "model": model, "result": res,
            "dense_state": load_checkpoint(root / "dense" / f"epoch{DENSE_EPOCHS:03d}.aadw"),
            "t_gen": t_gen, "t_total": t_total, "root": root}


@pytest.mark.slow
def test_criterion_04_synthetic_decoding(synthetic_run):
    ratio = np.abs(make_trf("attended").taps).max() / np.abs(make_trf("ignored").taps).max()
    res = synthetic_run["result"]
    acc = res.summary["accuracy_median_last5"]
    minutes = synthetic_run["t_total"] / 60
    ok = acc >= 0.70 and minutes <= 60 and abs(ratio - 2.5) < 1e-12 and len(synthetic_run["data"]) == 4000
    detail = (f"median-last-5 test accuracy {acc:.3f} (>= 0.70), wall {minutes:.1f} min (<= 60; "
              f"generation {synthetic_run['t_gen'] / 60:.1f} min), TRF ratio {ratio:.2f}")
    check(4, ok, detail)


@pytest.mark.slow
def test_synthetic_train_loss_decreases(synthetic_run):
    losses = synthetic_run["result"].losses("train")
    assert losses[-1] < losses[0]


@pytest.mark.slow
def test_criterion_05_ablation_direction(synthetic_run):
    t0 = time.perf_counter()
    model, data, plan = synthetic_run["model"], synthetic_run["data"], synthetic_run["plan"]
    full, _ = evaluate(model, data, plan.test)
    zero, _ = evaluate(model, data, plan.test, "zero_eeg")
    dt = time.perf_counter() - t0
    ok = 0.45 <= zero <= 0.55 and full - zero >= 0.15 and dt < 300
    check(5, ok, f"full {full:.3f}, zero_eeg {zero:.3f} (in [0.45, 0.55]), gap {100 * (full - zero):.1f} points "
                 f"(>= 15), {dt:.0f} s (< 300 s)")


@pytest.mark.slow
def test_criterion_06_pruning_tolerance(synthetic_run):
    dense = synthetic_run["result"].summary["accuracy_median_last5"]
    cfg = TrainConfig(epochs=FINETUNE_EPOCHS, seed=0)
    accs, mins = {}, {}
    for s in (0.4, 0.5, 0.8):
        t0 = time.perf_counter()
        model = build_model(cfg)
        model.load_state_dict(synthetic_run["dense_state"])
        res = finetune(model, synthetic_run["data"], synthetic_run["plan"], FinetuneSchedule("one_shot", s), cfg,
                       synthetic_run["root"] / f"prune{int(100 * s)}")
        accs[s] = res.train.summary["accuracy_median_last5"]
        mins[s] = (time.perf_counter() - t0) / 60
    ok = (abs(accs[0.4] - dense) <= 0.03 and abs(accs[0.5] - dense) <= 0.03 and dense - accs[0.8] >= 0.05
          and max(mins.values()) <= 45)
    detail = (f"dense {dense:.3f}; s=0.4 {accs[0.4]:.3f}, s=0.5 {accs[0.5]:.3f} (within 0.03); "
              f"s=0.8 {accs[0.8]:.3f} (>= 0.05 below); minutes " + ", ".join(f"{v:.1f}" for v in mins.values())
              + " (<= 45 each)")
    check(6, ok, detail)


# -- 7 ------------------------------------------------------------------------------


def test_criterion_07_pruning_invariants(tmp_path, tiny_data):
    t0 = time.perf_counter()
    problems = []
    for s in (0.4, 0.5, 0.8):
        model = AADNet(seed=1)
        mask = compute_model_mask(model, s)
        if any("bias" in k or ".bn." in k for k in mask.masks):
            problems.append(f"s={s}: bias/BN in mask")
    data, plan = tiny_data
    model = AADNet(seed=1)
    frozen = {k: p.data.copy() for k, p in model.named_parameters() if "bias" in k or ".bn." in k}
    from aadnet.sparsify import apply_mask

    mask = compute_model_mask(model, 0.5)
    apply_mask(model, mask)
    for k, p in model.named_parameters():
        if k in frozen and not np.array_equal(p.data, frozen[k]):
            problems.append(f"{k} changed by masking")
    res = finetune(model, data, plan, FinetuneSchedule("one_shot", 0.5),
                   TrainConfig(epochs=3, batch_size=5, checkpoint_every=1), tmp_path)
    for e in range(1, 4):
        state = load_checkpoint(tmp_path / f"epoch{e:03d}.aadw")
        for name, m in res.mask.masks.items():
            if np.any(state[name][~m] != 0):
                problems.append(f"epoch {e}: {name} resurrected")
    rep = sparsity_report(model)
    for name, layer in rep["layers"].items():
        if abs(layer["sparsity"] - 0.5) > 1 / layer["size"]:
            problems.append(f"{name}: sparsity {layer['sparsity']}")
    trained_bias = [k for k in frozen if not np.array_equal(model.parameters()[k].data, frozen[k])]
    if not trained_bias:
        problems.append("bias/BN parameters did not train")
    dt = time.perf_counter() - t0
    check(7, not problems and dt < 300,
          f"{len(rep['layers'])} prunable tensors within 1/|W|, masks held over 3 epochs, bias/BN unmasked "
          f"({dt:.0f} s) {'; '.join(problems)}")


# -- 8 ------------------------------------------------------------------------------


def test_criterion_08_split_safety(tmp_path):
    t0 = time.perf_counter()
    info = generate_dataset(SynthConfig(n_trials=1000, n_recordings=10, seed=2), tmp_path)
    man = read_manifest(info["manifest"])
    plan = split_dataset(man)
    problems = []
    for a, b in (("train", "test"), ("train", "val"), ("val", "test")):
        bad = overlapping_pairs(man, getattr(plan, a), getattr(plan, b))
        if bad:
            problems.append(f"{a}/{b}: {len(bad)} overlapping pairs")
    spans = {}
    for e in man:
        spans.setdefault(e["source"], []).append(e)
    if len(spans) != 10:
        problems.append(f"{len(spans)} recordings")
    for src, c in plan.per_source.items():
        k = c["train"] + c["val"] + c["test"]
        for name, frac in (("train", 0.75), ("val", 0.125), ("test", 0.125)):
            if abs(c[name] - frac * k) > 1:
                problems.append(f"{src} {name} {c[name]} vs {frac * k}")
    assert split_counts(118922) == (89192, 14865, 14865)
    dt = time.perf_counter() - t0
    check(8, not problems and dt < 60,
          f"10 recordings, {plan.counts()}, zero cross-split overlap, fractions within 1 trial ({dt:.1f} s) "
          + "; ".join(problems))


# -- 9 ------------------------------------------------------------------------------


def _brute_force_p(d):
    d = d[d != 0]
    if d.size == 0:
        return 1.0
    ranks = rankdata(np.abs(d))
    obs = ranks[d > 0].sum()
    sums = np.array([np.dot(ranks, s) for s in itertools.product((0, 1), repeat=d.size)])
    return min(1.0, 2 * min(np.mean(sums <= obs + 1e-9), np.mean(sums >= obs - 1e-9)))


def test_criterion_09_wilcoxon_exact():
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(1, 11):
        rng = np.random.default_rng(100 + n)
        for _ in range(50):
            a, b = rng.integers(0, 8, n) / 7, rng.integers(0, 8, n) / 7
            worst = max(worst, abs(wilcoxon_signed_rank(a, b).p_value - _brute_force_p(a - b)))
    dt = time.perf_counter() - t0
    check(9, worst <= 1e-12 and dt < 60, f"n=1..10 x 50 datasets, max |p - brute force| {worst:.1e} "
                                         f"(<= 1e-12), {dt:.1f} s")


# -- 10 -----------------------------------------------------------------------------


def test_criterion_10_statistic_plumbing():
    t0 = time.perf_counter()
    med = median_last_k([0.70, 0.72, 0.71, 0.74, 0.73])
    model = AADNet(seed=0)
    counts = param_count(model)
    text = format_param_report(counts)
    dt = time.perf_counter() - t0
    ok = (abs(med - 0.72) < 1e-12 and f"{counts['total']}" in text and f"{counts['prunable']}" in text
          and "416741" in text and f"{counts['total'] - 416741:+d}" in text and dt < 1)
    check(10, ok, f"median_last_k {med:.2f}; total {counts['total']}, prunable {counts['prunable']}, "
                  f"delta {counts['total'] - 416741:+d} vs 416741 ({dt:.2f} s)")
