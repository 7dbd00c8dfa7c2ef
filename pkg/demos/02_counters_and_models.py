"""
Choosing counters and training the predictors
=============================================

Rank counters by |Pearson r| against efficiency, keep those above 0.20,
build <config, telemetry> -> best-config samples and fit both classifiers.
"""

from forecaster import GenerationRecipe, generate_app
from forecaster.profiler import profile_all
from forecaster.dataset import Dataset, build_samples, label_intervals, split
from forecaster.features import select_from_profiles
from forecaster.models import MLPArchitecture, TrainConfig, mle_accuracy, train, train_mle

rec = GenerationRecipe(total_instructions=20_000_000)
profs = [profile_all(generate_app(f"app{k}", k, rec)) for k in range(4)]

report = select_from_profiles(profs, 0.20)
print(report.table())
print("kept", len(report.selected), "of", len(report.scores))

ds = Dataset.concat([build_samples(p, label_intervals(p), report.selected) for p in profs])
tr, va = split(ds, 0.8, seed=0)
print(f"\n{len(tr)} training / {len(va)} validation samples, {tr.input_dim} inputs")

model, acc = train(tr, va, MLPArchitecture(tr.input_dim, (128, 128), 128), TrainConfig(epochs=10))
print(f"MLP 128/128 validation accuracy {acc:.3f}")
mle = train_mle(tr)
print(f"Gaussian MLE validation accuracy {mle_accuracy(mle, va):.3f}")

# exact-label accuracy is harsh: neighbouring configs are often within noise
h = model.metadata["loss_history"]
print("loss", " ".join(f"{v:.3f}" for v in h[:: max(1, len(h) // 5)]))
