"""Train a small forecaster on synthetic traffic patterns and compare it with baselines.

Run: python3 demos/train_synthetic.py   (about a minute on one core)
"""

import time

from gaforecast.data.settings import get_setting
from gaforecast.evaluation import ConstantVelocity, NearestNeighborBank, evaluate
from gaforecast.model import ModelConfig, ModeQueryForecaster
from gaforecast.synthetic import DEFAULT_MIX, PatternSpec, generate_dataset, split_by_scenario
from gaforecast.training import TrainConfig, train

setting = get_setting("trajair-11s")
ds = generate_dataset(PatternSpec(seed=1), 48, DEFAULT_MIX, setting, stride=4)
train_set, test_set = split_by_scenario(ds, 0.8)
print(f"{len(train_set)} training and {len(test_set)} test windows "
      f"({setting.history_steps} steps in, {setting.future_steps} steps out)")

model = ModeQueryForecaster(ModelConfig(D=64, n_heads=4))
print(f"model with {model.num_parameters()} parameters")
t0 = time.perf_counter()
result = train(model, train_set.samples, TrainConfig(), val_samples=test_set.samples)
print(f"trained {len(result.history)} epochs in {time.perf_counter() - t0:.0f}s, "
      f"best epoch {result.best_epoch}")
print("winner share per mode:", ", ".join(f"{s:.2f}" for s in result.mode_share))

rows = [
    ("constant velocity", ConstantVelocity(setting)),
    ("nearest neighbour", NearestNeighborBank(train_set.samples)),
    ("mode-query model", model),
]
print(f"\n{'method':<20}{'minADE5':>10}{'minFDE5':>10}")
for name, forecaster in rows:
    rep = evaluate(forecaster, test_set.samples, setting)
    print(f"{name:<20}{rep.minade:>10.3f}{rep.minfde:>10.3f}")
