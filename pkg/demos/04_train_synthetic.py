"""Train a small model on synthetic band-energy clips and score it by clip voting.

Run:  python demos/04_train_synthetic.py
"""
import logging

from mclnn import config_from_dict, train
from mclnn.datasets import clip_accuracy
from mclnn.features import apply_standardizer, fit_standardizer
from mclnn.synthetic import band_energy_clips

logging.basicConfig(level=logging.INFO, format="%(message)s")

# Class "a" lifts mel bins 5-15, class "b" lifts bins 40-50.
train_clips = band_energy_clips(40, 60, rng=1)
val_clips = band_energy_clips(10, 60, rng=2)
test_clips = band_energy_clips(20, 60, rng=3)

# Standardize with training statistics only.
std = fit_standardizer(train_clips)
train_clips, val_clips, test_clips = ([apply_standardizer(c, std) for c in s] for s in (train_clips, val_clips, test_clips))

# A scaled-down model so the demo finishes in seconds; `{}` would give the full default.
cfg = config_from_dict({
    "classes": ["a", "b"],
    "order": 4,
    "layers": [{"width": 40, "bandwidth": 20, "overlap": -5}, {"width": 20, "bandwidth": 5, "overlap": 3}],
    "extra_frames": 5,
    "dense_widths": [20],
    "optimizer": {"max_epochs": 15, "patience": 5},
})
run = train(cfg, train_clips, val_clips)
targets = [cfg.classes.index(c.label) for c in test_clips]
print(f"stopped: {run.stop_reason}; best epoch {run.best_epoch}")
print(f"held-out clip accuracy: {clip_accuracy(run.best_params, test_clips, targets):.2f}")
