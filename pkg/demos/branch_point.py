"""Forecasts at a departure branch point, where the aircraft may turn or continue straight.

Trains a compact model on departure scenarios only, then prints the
predicted endpoints and scores for one ambiguous history.

Run: python3 demos/branch_point.py   (a few seconds on one core)
"""

import numpy as np

from gaforecast.data.settings import get_setting
from gaforecast.model import ModelConfig, ModeQueryForecaster
from gaforecast.synthetic import PatternSpec, generate_dataset, split_by_scenario
from gaforecast.training import TrainConfig, train

setting = get_setting("trajair-11s")
mix = {"departure_turn": 0.5, "departure_straight": 0.5}
ds = generate_dataset(PatternSpec(seed=3), 30, mix, setting, stride=4)
train_set, test_set = split_by_scenario(ds, 0.8)

model = ModeQueryForecaster(ModelConfig(D=32, n_heads=4))
res = train(model, train_set.samples, TrainConfig(epochs=12, lr_milestones=(6, 9)))
print("winner share per mode:", ", ".join(f"{s:.2f}" for s in res.mode_share))

amb = [(s, lab) for s, lab in zip(test_set.samples, test_set.labels) if lab.ambiguous]
sample, label = amb[len(amb) // 2]
pred = model.predict(sample.history)
print(f"\nhistory ends at {np.round(sample.history.points[-1], 3)} km; "
      f"true continuation: {label.maneuver}")
print(f"{'mode':<6}{'score':>7}   endpoint x, y, z (km)")
for j in np.argsort(-pred.scores):
    print(f"{j:<6}{pred.scores[j]:>7.2f}   {np.round(pred.trajectories[j, -1], 3)}")
print(f"true endpoint        {np.round(sample.future.points[-1], 3)}")
ends = pred.trajectories[:, -1]
spread = np.linalg.norm(ends[:, None] - ends[None], axis=-1).max()
print(f"largest endpoint separation between modes: {spread:.2f} km")
