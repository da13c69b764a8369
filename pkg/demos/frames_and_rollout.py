"""Agent-centric frames and flight-parameter rollout on a single track.

Run: python3 demos/frames_and_rollout.py
"""

import math

import numpy as np

from gaforecast.geometry import Trajectory, denormalize_trajectory, normalize_history
from gaforecast.kinematics import FlightParams, rollout

# a climbing turn sampled at 1 Hz, heading north-east
t = np.arange(11.0)
heading = math.radians(45) + math.radians(2) * t
pts = np.stack([np.cumsum(0.04 * np.sin(heading)), np.cumsum(0.04 * np.cos(heading)), 0.3 + 0.002 * t], axis=1)
history = Trajectory.uniform(pts, 1.0)

local, frame = normalize_history(history)
print(f"estimated heading: yaw {math.degrees(frame.yaw):.1f} deg, pitch {math.degrees(frame.pitch):.2f} deg")
print("last local step (should point along +y):", np.round(local.points[-1] - local.points[-2], 6))

# continue the turn for 120 s at 0.1 Hz, expressed in the local frame
T_f, dt = 12, 10.0
yaw = math.radians(2) * dt * np.arange(1, T_f + 1)
params = FlightParams.from_angles(np.full(T_f, 0.04), yaw, np.zeros(T_f))
future_local = rollout(params, dt)
future = denormalize_trajectory(future_local, frame)

print("\nstep  local x,y (km)      global x,y (km)")
for i in range(0, T_f, 3):
    lx, ly, _ = future_local[i]
    gx, gy, _ = future[i]
    print(f"{(i + 1) * dt:4.0f}s  {lx:7.3f} {ly:7.3f}   {gx:7.3f} {gy:7.3f}")

back, _ = normalize_history(Trajectory.uniform(denormalize_trajectory(local, frame), 1.0))
print(f"\nround trip error: {np.abs(back.points - local.points).max():.1e} km")
