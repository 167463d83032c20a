"""Sweep the translational gain and the noise width on CASE 1.

Every cell is an independent run written to its own directory; the sweep
report is printed as a small table.  A bad cell (for instance a negative
gain) is recorded as failed rather than stopping the sweep.
"""

import sys
import tempfile

from varpose.config import preset, set_field
from varpose.harness import sweep

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="varpose-sweep-")
raw = set_field(preset("case1"), "timing.truth_horizon", 20.0)
report = sweep(raw, [("gains.kappa", [0.1, 1.0, 10.0]), ("sensors.noise_width", [0.0, 0.001, 0.01])], out)

print(f"results in {out}")
print("   kappa    noise   angle [rad]   position [m]")
for c in report["cells"]:
    v = c["values"]
    if c["status"] != "ok":
        print(f"{v['gains.kappa']:8g} {v['sensors.noise_width']:8g}   {c['error']}")
        continue
    fq = c["summary"]["final_quarter"]
    print(f"{v['gains.kappa']:8g} {v['sensors.noise_width']:8g} {fq['ang_err']['mean']:13.3e} {fq['pos_err']['mean']:14.3e}")
