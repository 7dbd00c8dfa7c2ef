"""
Leave-one-out policy comparison
===============================

Small end-to-end run: four short apps, a two-candidate search, every policy,
then the report tables. Artifacts land in ./demo_out.
"""

from forecaster import experiments as ex
from forecaster.models import TrainConfig
from forecaster.workload import GenerationRecipe

spec = ex.ExperimentSpec(
    apps=tuple((f"app{k}", k) for k in range(4)),
    recipe=GenerationRecipe(total_instructions=20_000_000),
    search_candidates=((64, 64), (128, 128)),
    train=TrainConfig(epochs=10),
    out_dir="demo_out",
)
table = ex.cmd_pipeline(spec)

print(f"{'policy':<14}{'efficiency':>11}{'ips':>8}{'power':>8}")
for p in table.policies():
    print(f"{p:<14}{table.mean(p):>11.3f}{table.mean(p, 'norm_ips'):>8.3f}{table.mean(p, 'norm_power'):>8.3f}")
print("forecaster share of the best-dynamic gain:", round(table.summary()["forecaster_gain_share"], 3))

files = ex.cmd_report("demo_out", plots=True)
for k, v in files.items():
    print(k, "->", v)
