"""One test per acceptance criterion.

Each test records a PASS/FAIL line (printed in the terminal summary under
"acceptance criteria") before asserting, so the line appears either way.
"""
import math
import time

import numpy as np
import pytest

import gradcases
from microcrack import harness as H
from microcrack import losses as LS
from microcrack import mda
from microcrack import wavegen as W
from microcrack.model import ModelConfig, build, load_checkpoint, save_checkpoint
from oracles import swiss_roll

REFERENCE_PARAMS = 1_136_000


def test_01_gradient_correctness(acceptance):
    start = time.perf_counter()
    worst = {}
    for name, case in {**gradcases.LAYER_CASES, **gradcases.LOSS_CASES}.items():
        worst[name] = max(gradcases.run(case, seed, eps=1e-5) for seed in range(20))
    elapsed = time.perf_counter() - start
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err < 1e-3 and elapsed < 120
    acceptance(1, "gradient correctness", ok,
               f"{len(worst)} ops x 20 seeds, worst {name} {err:.2e} (< 1e-3), {elapsed:.1f}s (< 120s)")
    assert err < 1e-3, worst
    assert elapsed < 120


def test_02_architecture_trace(acceptance):
    stages = [(1, 2, 500, 81), (1, 16, 250, 81), (1, 32, 125, 81), (1, 64, 62, 81), (1, 128, 31, 81),
              (1, 128, 1, 81), (1, 128, 9, 9), (1, 16, 9, 9), (1, 8, 18, 18), (1, 8, 36, 36),
              (1, 1, 36, 36), (1, 1296)]
    model = build(ModelConfig())
    trace = model.trace(np.zeros((1, 2, 2000, 81)))
    ok = trace[0] == (1, 2, 2000, 81) and len(trace) == 13
    mismatches = [(i + 1, want, got) for i, (want, got) in enumerate(zip(stages, trace[1:])) if want != got]
    ok = ok and not mismatches
    acceptance(2, "architecture trace", ok, f"{12 - len(mismatches)}/12 stages match" +
               (f"; first mismatch {mismatches[0]}" if mismatches else ""))
    assert trace[0] == (1, 2, 2000, 81)
    for i, want in enumerate(stages, start=1):
        assert trace[i] == want, f"stage {i}: expected {want}, got {trace[i]}"


@pytest.mark.xfail(strict=True, reason="the specified layer list holds ~0.69M parameters; see the decisions ledger")
def test_03_parameter_count(acceptance):
    n = build(ModelConfig()).parameter_count()
    delta = n - REFERENCE_PARAMS
    ok = 970_000 <= n <= 1_310_000
    detail = f"count {n}, reference {REFERENCE_PARAMS}, delta {delta:+d} ({delta / REFERENCE_PARAMS:+.1%}), band [0.97M, 1.31M]"
    print(detail)
    acceptance(3, "parameter count", ok, detail)
    assert ok, detail


def test_04_loss_identities(acceptance):
    rng = np.random.default_rng(4)
    focal_gap = 0.0
    for _ in range(100):
        p = rng.uniform(0.001, 0.999, 64)
        y = (rng.random(64) < 0.3).astype(float)
        focal_gap = max(focal_gap, abs(LS.focal_loss(p, y, 1.0, 0.0).item() - LS.bce_loss(p, y).item()))
    p = rng.random(128)
    y = (rng.random(128) < 0.1).astype(float)
    c1, c0 = LS.LossConfig("cwdl", cwdl_alpha=1.0), LS.LossConfig("cwdl", cwdl_alpha=0.0)
    end1 = LS.combined_weighted_dice_loss(p, y, c1).item() == LS.weighted_dice_loss(p, y, c1.class_weights).item()
    end0 = LS.combined_weighted_dice_loss(p, y, c0).item() == LS.bce_loss(p, y).item()
    hard = (rng.random(50) < 0.2).astype(float)
    hard[0] = 1.0
    perfect = LS.dice_loss(hard, hard, smooth=0.0).item()
    worked = LS.dice_loss(np.array([0.8, 0.2, 0.6, 0.1]), np.array([1.0, 0, 1, 0]), 1.0).item()
    ok = focal_gap < 1e-9 and end1 and end0 and perfect == 0.0 and abs(worked - 0.19149) < 1e-5
    acceptance(4, "loss identities", ok,
               f"focal->BCE max gap {focal_gap:.1e}, CWDL endpoints exact {end1 and end0}, "
               f"perfect Dice {perfect}, worked Dice {worked:.6f}")
    assert focal_gap < 1e-9
    assert end1 and end0
    assert perfect == 0.0
    assert abs(worked - 0.19149) < 1e-5


def test_05_overfit(acceptance, overfit_run):
    cfg, model, result, _ = overfit_run
    ok = result.split == "train" and result.n_eval == 8 and result.dsc >= 0.9 and result.wall_time < 1800
    acceptance(5, "overfit sanity", ok,
               f"micro GELU+CWDL, 8 samples, {cfg.epochs} epochs: train DSC {result.dsc:.4f} (>= 0.9), "
               f"final loss {result.final_train_loss:.4f}, {result.wall_time:.0f}s (< 1800s)")
    assert result.split == "train" and result.n_eval == 8
    assert result.dsc >= 0.9
    assert result.wall_time < 1800


def test_06_grid_contract(acceptance, grid_dataset, tmp_path):
    cfg = H.TrainConfig(epochs=1, batch_size=8, temporal_len=80, seed=0, data=str(grid_dataset))
    data = H.load_data(grid_dataset, 80)
    first = H.grid(cfg, tmp_path / "a", data)
    second = H.grid(cfg, tmp_path / "b", data)
    text_a = (tmp_path / "a" / "report.txt").read_text(encoding="utf-8")
    text_b = (tmp_path / "b" / "report.txt").read_text(encoding="utf-8")
    csv_same = (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    header = text_a.splitlines()[1]
    cols = [f">{k} µm" for k in range(5)]
    rows = text_a.splitlines()[3:]
    ok = (len(first) == 16 and len(rows) == 16 and all(c in header for c in cols)
          and all(r.status == "ok" for r in first) and text_a == text_b and csv_same)
    acceptance(6, "grid contract", ok, f"{len(first)} results, {len(rows)} report rows, "
               f"columns >0..>4 µm present {all(c in header for c in cols)}, rerun identical {text_a == text_b and csv_same}")
    assert len(first) == len(second) == 16
    assert [(r.activation, r.loss) for r in first] == [(a, l) for a in H.GRID_ACTIVATIONS for l in H.GRID_LOSSES]
    assert all(r.status == "ok" for r in first)
    assert len(rows) == 16
    assert all(c in header for c in cols)
    assert text_a == text_b and csv_same


def test_07_simulator_physics(acceptance):
    plate = W.PlateSpec()
    clean = W.simulate(plate)
    e = clean.energy[:, W.source_switch_off(plate):]
    drift = float(np.max((e.max(axis=1) - e.min(axis=1)) / e[:, 0]))
    mirror = float(np.max(np.abs(clean.final - clean.final[:, ::-1, :])))

    right = W.sensor_cells(plate)[1] > 72
    ladder = [0.5, 1.0, 2.0, 4.0, 8.0]
    transmitted = [float(np.sum(W.simulate(plate, [W.CrackSpec(72.0, 0.0, 72.0, 144.0, w)]).traces[..., right] ** 2))
                   for w in ladder]
    monotone = all(a >= b for a, b in zip(transmitted, transmitted[1:]))

    frac = float(np.mean([W.rasterize_mask(W.sample_cracks(0, i, plate)).mean() for i in range(500)]))
    ok = drift < 0.01 and mirror < 1e-9 and monotone and 0.03 <= frac <= 0.07
    acceptance(7, "simulator physics", ok,
               f"energy drift {drift:.1e} (< 1%), mirror {mirror:.1e} (< 1e-9), width ladder monotone {monotone}, "
               f"500-sample crack fraction {frac:.2%} (3-7%)")
    assert drift < 0.01
    assert mirror < 1e-9
    assert monotone, transmitted
    assert 0.03 <= frac <= 0.07


def test_08_metrics_oracle(acceptance):
    rng = np.random.default_rng(8)
    bad = 0
    for _ in range(1000):
        p = (rng.random(1296) < rng.uniform(0, 0.2)).astype(float)
        y = (rng.random(1296) < rng.uniform(0, 0.2)).astype(float)
        tp = tn = fp = fn = 0
        for a, b in zip(p, y):
            if a >= 0.5:
                if b == 1:
                    tp += 1
                else:
                    fp += 1
            elif b == 1:
                fn += 1
            else:
                tn += 1
        ref_dsc = 1.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
        ref_acc = (tp + tn) / (tp + tn + fp + fn)
        c = LS.confusion(p, y)
        bad += not (LS.dsc(c) == ref_dsc and LS.accuracy(c) == ref_acc)
    acceptance(8, "metrics oracle", bad == 0, f"{1000 - bad}/1000 mask pairs exactly equal")
    assert bad == 0


def _fd_count(values):
    v = np.sort(np.asarray(values))
    q1, q3 = np.quantile(v, [0.25, 0.75])
    width = 2 * (q3 - q1) * len(v) ** (-1 / 3)
    return math.ceil((v[-1] - v[0]) / width)


def test_09_mda(acceptance, overfit_run, micro_data):
    pts, sheet = swiss_roll(300, seed=0)
    rv = mda.residual_variance(mda.geodesic_embed(pts, 10), sheet)

    cfg, trained, _, _ = overfit_run
    untrained = build(cfg.model_config)
    x, y, _ = micro_data
    # common reference: anchor distances over the ground-truth masks
    truth = mda.make_pseudo_labels(mda.output_distances(y))
    quality = {}
    for tag, model in (("trained", trained), ("untrained", untrained)):
        _, taps = model.forward_with_taps(x, [model.head_id])
        quality[tag] = mda.embedding_quality(mda.geodesic_embed(taps[model.head_id], 4), truth.anchor_distance)

    rng = np.random.default_rng(9)
    fd_ok = True
    for _ in range(10):
        labels = mda.make_pseudo_labels(mda.output_distances(rng.random((100, 1296))))
        fd_ok &= labels.k == _fd_count(labels.anchor_distance)
    ok = rv < 0.1 and quality["trained"] > quality["untrained"] and fd_ok
    acceptance(9, "MDA properties", ok,
               f"swiss-roll residual variance {rv:.4f} (< 0.1), Spearman trained {quality['trained']:.3f} vs "
               f"untrained {quality['untrained']:.3f}, FD bin count matches {fd_ok}")
    assert rv < 0.1
    assert quality["trained"] > quality["untrained"]
    assert fd_ok


def test_10_round_trips(acceptance, small_dataset, overfit_run, tmp_path):
    path, samples = small_dataset
    back = W.read_dataset(path)
    data_ok = all(np.array_equal(a.input, b.input) and np.array_equal(a.mask, b.mask) and a.cracks == b.cracks
                  for a, b in zip(samples, back)) and len(back) == len(samples)
    rewritten = tmp_path / "again.mcwv"
    W.write_dataset(back, rewritten)
    data_ok &= rewritten.read_bytes() == path.read_bytes()

    _, model, _, ckpt = overfit_run
    loaded = load_checkpoint(ckpt)
    ck_ok = all(np.array_equal(p.data, loaded.named_params()[k].data) for k, p in model.named_params().items())
    ck_ok &= all(np.array_equal(b, loaded.named_buffers()[k]) for k, b in model.named_buffers().items())
    save_checkpoint(loaded, tmp_path / "again.ckpt")
    ck_ok &= (tmp_path / "again.ckpt").read_bytes() == ckpt.read_bytes()

    a, b = tmp_path / "s1.mcwv", tmp_path / "s2.mcwv"
    W.generate_dataset(2, 99, a)
    W.generate_dataset(2, 99, b)
    same = a.read_bytes() == b.read_bytes()
    ok = data_ok and ck_ok and same
    acceptance(10, "round trips", ok,
               f"dataset write/read bit-exact {data_ok}, checkpoint save/load bit-exact {ck_ok}, same-seed bytes {same}")
    assert data_ok and ck_ok and same
