"""
Training, evaluation and reports
================================

Train on a small corpus for a few epochs, then report accuracy, mean loss,
mAP, the accuracy-vs-distance curve and a comparison table. The full corpus
takes ``python -m tsfn gen-data`` and ``python -m tsfn train`` instead.
"""

import tempfile
from pathlib import Path

from tsfn import SynthConfig, TrainConfig, evaluate, generate_dataset, train
from tsfn.metrics import distance_curve_csv, report_comparison

work = Path(tempfile.mkdtemp())
synth = SynthConfig(T=16, H=16, W=16, samples_per_meter=6, distance_min=4, distance_max=9,
                    test_per_cell=1, seed=1)
generate_dataset(synth, work / "data")

config = TrainConfig.from_dict({
    "manifest": str(work / "data"),
    "checkpoint_path": str(work / "model.ckpt"),
    "epochs": 15,
    "batch_size": 8,
    "learning_rate": 3e-3,
    "lr_schedule": "cosine",
    "model": {"input_pool": 1},
})
result = train(config, progress=print)
print(result.log_path.read_text())

# A run this short only starts to separate the classes. The default corpus
# with the default settings reaches about 0.92 test accuracy.
metrics = evaluate(result.checkpoint_path, work / "data")
print(f"accuracy {metrics.accuracy:.3f}  loss {metrics.mean_loss:.3f}  mAP {metrics.mAP:.3f}")
print(distance_curve_csv(metrics))

# Single-branch ablations reuse the trained weights with one branch zeroed
rows = [("TSFN", metrics)]
for name, branch in (("TCN", "tcn_only"), ("R(2+1)D", "r2plus1d_only")):
    rows.append((name, evaluate(result.checkpoint_path, work / "data", branch=branch)))
print(report_comparison(rows, work / "comparison.csv"))
