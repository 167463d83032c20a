"""Two downward-tilted cameras: the vehicle loses sight of every beacon.

Between roughly 10.5 s and 15 s no beacon is visible.  Inertial direction
sensing still pins the attitude, but position only coasts on the velocity
estimate.  With optical velocities the twist is held over the gap; with a
rate gyro the angular rate keeps flowing and only the linear part is held.
"""

import numpy as np

from varpose.config import preset, set_field
from varpose.harness import run_experiment

raw = set_field(preset("case2"), "timing.truth_horizon", 20.0)

for source in ("optical", "gyro"):
    report = run_experiment(set_field(raw, "velocity.source", source), write=False)
    t, nb = report.column("t"), report.column("n_beacons")
    ang, pos = report.column("ang_err"), report.column("pos_err")
    blind = t[nb == 0]
    print(f"\nvelocity source: {source}")
    if len(blind):
        print(f"no beacons for {len(blind)} epochs, {blind[0]:.2f} s to {blind[-1]:.2f} s")
    for when in (0.0, 10.0, 12.5, 15.0, 17.5, 20.0):
        k = int(np.argmin(np.abs(t - when)))
        print(f"  t={t[k]:5.1f}  |I|={int(nb[k])}  attitude {np.degrees(ang[k]):8.3f} deg  position {pos[k]:7.4f} m")
    tail = t >= t[-1] - 5.0
    print(f"  last 5 s means: {np.degrees(ang[tail].mean()):.3f} deg, {pos[tail].mean():.4f} m "
          f"(start {np.degrees(ang[0]):.1f} deg, {pos[0]:.2f} m)")
