"""Acceptance criteria 1-10, each printing one PASS/FAIL line.

Criteria 8-10 run the real pipeline on the default synthetic corpus through the
command line, so this module takes tens of minutes on one core.
"""

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from tsfn.cli import main
from tsfn.losses import Batch, LossWeights, composite_loss, distance_loss, view_variance_loss
from tsfn.metrics import PAPER_TSFN_ROW, Metrics, average_precision, comparison_table
from tsfn.model import init_params
from tsfn.selfcheck import (composite_gradcheck, conv_oracle_errors, factorization_error,
                            map_oracle_error, micro_batch, micro_config)
from tsfn.synth import SynthConfig, degrade, render_gesture, sharpness_metric
from tsfn.tensor import Tensor

BUDGET_SECONDS = 15 * 60
SEEDS = (0, 1, 2)


def test_1_reference_figures_are_not_reproduced(acceptance):
    table = comparison_table([("TSFN (synthetic)", Metrics(0.5, 1.0, 0.5, {}, [None] * 6, 0))])
    ok = PAPER_TSFN_ROW == ("TSFN", 96.1, 0.12, 0.92) and "TSFN 96.1 0.12 0.92" in table
    ok &= "not comparable" in table and "reference only" in table
    assert acceptance(1, ok, "reference TSFN row (96.1%, 0.12, 0.92) is quoted for context only; "
                             "the webcam data is unpublished, synthetic criteria 2-10 stand in")


def test_2_convolutions_match_loop_oracles(acceptance):
    start = time.perf_counter()
    errs = conv_oracle_errors(seed=0, instances=100)
    elapsed = time.perf_counter() - start
    ok = max(errs.values()) <= 1e-12 and elapsed < 30
    detail = ", ".join(f"{k} {v:.2g}" for k, v in errs.items())
    assert acceptance(2, ok, f"100 instances each, max abs error {detail}, {elapsed:.1f}s")


def test_3_delta_temporal_kernel_factorization(acceptance):
    err = factorization_error(seed=0, instances=50)
    assert acceptance(3, err <= 1e-12, f"R(2+1)D with delta kernel, 50 instances, max error {err:.2g}")


def test_4_composite_gradient(acceptance):
    start = time.perf_counter()
    err, fault = composite_gradcheck(seed=0)
    elapsed = time.perf_counter() - start
    ok = err < 1e-4 and fault > 0.3 and elapsed < 120
    assert acceptance(4, ok, f"max relative error {err:.2g}, corrupted entry reports {fault:.2g}, "
                             f"{elapsed:.1f}s")


def test_5_loss_degeneracies(acceptance):
    rng = np.random.default_rng(5)
    params = init_params(micro_config(0))
    batch = micro_batch(0, n=2, views=2)
    plain = composite_loss(params, batch, LossWeights(alpha=0.0, beta=0.0, gamma=0.0, views=2))
    probs = plain.scores.probs.data
    mean_ce = float(np.mean(-np.log(probs[np.arange(2), batch.labels])))
    e_zero = abs(plain.total.item() - mean_ce)

    ce = rng.random(7) * 3
    e_unit = abs(distance_loss(np.ones(7), Tensor(ce)).item() - float(np.mean(ce)))

    same = rng.random((4, 1)) * 2
    e_views = abs(view_variance_loss(Tensor(np.repeat(same, 3, axis=1))).item())
    clip_batch = Batch(batch.clips, batch.labels, batch.distances, batch.seeds)
    clip_batch.views = np.repeat(batch.clips[:, None], 2, axis=1)
    e_model_views = abs(composite_loss(params, clip_batch, LossWeights(views=2)).robustness.item())

    hand = distance_loss([4.0, 28.0], Tensor(np.array([0.5, 1.0]))).item()
    near = distance_loss([4.0], Tensor(np.array([0.8]))).item()
    far = distance_loss([28.0], Tensor(np.array([0.8]))).item()
    ok = (max(e_zero, e_unit, e_views, e_model_views) <= 1e-12 and hand == 15.0
          and far / near == 7.0)
    assert acceptance(5, ok, f"zero weights {e_zero:.1g}, unit distances {e_unit:.1g}, identical "
                             f"views {max(e_views, e_model_views):.1g}, hand case {hand}, "
                             f"weight ratio {far / near}")


def test_6_average_precision(acceptance):
    err = map_oracle_error(seed=0, instances=100)
    ap = average_precision([(0.9, True), (0.8, False), (0.7, True), (0.1, False)])
    ok = err <= 1e-9 and abs(ap - 0.8333) <= 1e-4
    assert acceptance(6, ok, f"100 instances max error {err:.2g}, ranks 1 and 3 of 4 give {ap:.4f}")


def test_7_sharpness_falls_with_distance(acceptance):
    config = SynthConfig()
    grid = list(range(4, 29, 4))
    bad = []
    for seed in range(10):
        clip = render_gesture(seed % 6, seed, config)
        s = [sharpness_metric(degrade(clip, d, seed, config)) for d in grid]
        if any(b > a for a, b in zip(s, s[1:])) or not s[-1] < s[0]:
            bad.append(seed)
    assert acceptance(7, not bad, f"10 seeds over d={grid}, non-monotone seeds {bad}")


# -- pipeline criteria ---------------------------------------------------------------

def run_cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"tsfn {' '.join(map(str, argv))} exited {code}"


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def train_and_eval(root: Path, corpus: Path, name: str, seed: int, ablation: str = "full",
                   *extra) -> tuple[Metrics, Path]:
    out = root / name
    out.mkdir()
    run_cli("train", "--manifest", corpus, "--out", out / "model.ckpt", "--seed", seed,
            "--ablation", ablation, "--quiet", *extra)
    run_cli("eval", "--checkpoint", out / "model.ckpt", "--manifest", corpus,
            "--ablation", ablation, "--out", out / "metrics.json")
    return Metrics.from_dict(json.loads((out / "metrics.json").read_text())), out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    start = time.perf_counter()
    run_cli("gen-data", "--out", root / "data")
    metrics, _ = train_and_eval(root, root / "data", "full-0", 0)
    return root, metrics, time.perf_counter() - start


def pooled(metrics: Metrics, keep) -> float:
    rows = [(a, n) for d, (a, n) in metrics.per_distance.items() if keep(d)]
    return sum(a * n for a, n in rows) / sum(n for _, n in rows)


def test_8_end_to_end_learning(acceptance, pipeline):
    _, m, elapsed = pipeline
    near, far = pooled(m, lambda d: d <= 8), pooled(m, lambda d: d >= 24)
    ok_quality = m.accuracy >= 0.90 and m.mAP >= 0.85 and near > far
    ok_time = elapsed <= BUDGET_SECONDS
    acceptance(8, ok_quality and ok_time,
               f"accuracy {m.accuracy:.3f}, mAP {m.mAP:.3f}, near {near:.3f} vs far {far:.3f}, "
               f"{elapsed:.0f}s on {os.cpu_count()} core(s) (budget {BUDGET_SECONDS}s)")
    assert m.accuracy >= 0.90 and m.mAP >= 0.85
    assert near > far
    assert ok_time


def test_9_fusion_beats_each_branch(acceptance, pipeline):
    root, full0, _ = pipeline
    corpus = root / "data"
    rows, wins = [], 0
    for seed in SEEDS:
        full = full0 if seed == 0 else train_and_eval(root, corpus, f"full-{seed}", seed)[0]
        tcn = train_and_eval(root, corpus, f"tcn-{seed}", seed, "tcn_only")[0]
        r21 = train_and_eval(root, corpus, f"r21-{seed}", seed, "r2plus1d_only")[0]
        held = full.accuracy >= tcn.accuracy and full.accuracy >= r21.accuracy
        wins += held
        rows.append(f"seed {seed}: {full.accuracy:.3f}/{tcn.accuracy:.3f}/{r21.accuracy:.3f}")
    ok = wins >= 2
    acceptance(9, ok, f"full/tcn/r2plus1d accuracy {'; '.join(rows)}; held on {wins}/3 seeds")
    assert ok


def test_10_pipeline_is_byte_deterministic(acceptance, tmp_path):
    digests, outputs = [], []
    for run in ("a", "b"):
        root = tmp_path / run
        root.mkdir()
        run_cli("gen-data", "--out", root / "data")
        digests.append(tree_digest(root / "data"))
        _, out = train_and_eval(root, root / "data", "full", 0, "full", "--epochs", 1)
        run_cli("curve", "--metrics", out / "metrics.json", "--out", out / "curve.csv")
        run_cli("compare", "--result", f"TSFN={out / 'metrics.json'}", "--out", out / "table.csv")
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same_data = digests[0] == digests[1]
    same_files = outputs[0] == outputs[1]
    names = sorted(outputs[0])
    ok = same_data and same_files and len(names) == 6
    acceptance(10, ok, f"corpus digest equal: {same_data}; {', '.join(names)} equal: {same_files}")
    assert ok
