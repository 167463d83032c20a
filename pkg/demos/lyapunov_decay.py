"""Watch the filter's energy drain away in a noise-free run.

The continuous filter is integrated on a fine grid against exact beacon
measurements.  Between visibility switches the energy only ever falls, and
its rate equals the dissipation -phi^T D phi.  When a beacon enters or
leaves the view the potential changes form, so the energy may jump there.
"""

import numpy as np

from varpose.continuous import lyapunov_value
from varpose.config import preset, set_field
from varpose.harness import ExperimentConfig, ReferenceSource, reference_run
from varpose.truth import simulate_truth

raw = preset("case1")
for key in ("sensors.noise_width", "sensors.direction_noise_width", "sensors.velocity_noise_width"):
    raw = set_field(raw, key, 0.0)
cfg = ExperimentConfig.from_dict(set_field(raw, "timing.truth_horizon", 20.0))
traj = simulate_truth(cfg.vehicle, cfg.initial_truth, cfg.dt, 10.0)
src = ReferenceSource(traj, cfg.world, cfg.rig, cfg.gains.weight_spec)

states = reference_run(traj, src, cfg.gains, cfg.g_hat0, cfg.xi_hat0, substeps=2)
h = cfg.dt / 2
V, seen = [], []
for k, s in enumerate(states):
    src.hold(min(k // 2, len(traj) - 2))
    pose = src.pose(k * h)
    V.append(lyapunov_value(s.g_hat, s.phi, pose, src.terms(pose), cfg.gains))
    seen.append(src.visible(pose))
V = np.array(V)

switches = [k for k in range(len(V) - 1) if seen[k] != seen[k + 1]]
smooth = np.ones(len(V) - 1, bool)
smooth[switches] = False
print(f"V(0) = {V[0]:.4f}, V(10 s) = {V[-1]:.3e}")
print(f"largest increase between switches: {np.diff(V)[smooth].max():.2e}")
print(f"{len(switches)} visibility switches; jumps there: "
      + ", ".join(f"{V[k + 1] - V[k]:+.2e}" for k in switches[:6]))
for k in range(0, len(V), 200):
    print(f"  t={k * h:5.1f}  V={V[k]:.6e}")
