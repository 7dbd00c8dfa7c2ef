"""
Way gating with busy caches
===========================

Drive one app with a schedule that keeps asking for the smallest
configuration and watch how much of the request the caches allow.
"""

import numpy as np

from forecaster import GenerationRecipe, generate_app
from forecaster.config_space import max_config
from forecaster.runtime import OraclePolicy, RunParams, StaticPolicy, run_online

app = generate_app("demo", 11, GenerationRecipe(total_instructions=20_000_000))
run = RunParams(interval_size=500_000)
n = app.total_instructions // run.interval_size

sched = [max_config().index] * 5 + [0] * (n - 5)
rep = run_online(app, OraclePolicy(sched, "shrink"), params=run)
base = run_online(app, StaticPolicy(max_config(), "baseline-all"), params=run)

print("interval  L2 ways  L3 ways  writebacks  max valid gated")
for r in rep.rows[3:15]:
    print(f"{r['interval']:>8} {r['l2_ways_achieved']:>8} {r['l3_ways_achieved']:>8} {r['writebacks']:>11} "
          f"{r['max_valid_gated']:>16.2f}")

print(f"\nachieved / requested gated ways: {rep.achievement():.3f}")
print(f"L2 static saved (mean): {rep.column('l2_static_saving_w').mean():.3f} W")
print(f"L3 static saved (mean): {rep.column('l3_static_saving_w').mean():.3f} W")
print(f"efficiency x{rep.mean_efficiency / base.mean_efficiency:.3f}  "
      f"ips x{rep.mean_ips / base.mean_ips:.3f}  power x{rep.mean_power / base.mean_power:.3f}")
assert np.all(rep.column("writebacks") == rep.column("dirty_blocks_gated"))
