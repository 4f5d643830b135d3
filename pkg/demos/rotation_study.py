# %% [markdown]
# # Rotation study on synthetic bars
#
# **Question**: as test images are rotated away from the training
# distribution, which uncertainty methods keep their probabilities honest?
#
# The dataset draws one ray per class, spread over 300 degrees, so rotating
# an image makes it look more and more like a different class. Five methods
# are trained with the shipped config: vanilla, temperature scaling,
# MC dropout with a tuned rate, a five-member ensemble and mean-field SVI.
# The full run takes about half a minute.

# %%
import tempfile
from pathlib import Path

from shiftbench import harness as H

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "bars_rotation.json"
out = Path(tempfile.mkdtemp(prefix="rotation_"))
cfg = H.load_config(CONFIG, output_dir=out)
report = H.run(cfg)
print("outputs in", out)
print("temperature", report.meta["temperature"])

# %% [markdown]
# ## Metric tables by rotation angle

# %%
names = [m.name for m in cfg.methods]
for metric in ("accuracy", "brier", "ece", "mean_entropy"):
    print(f"\n{metric}")
    print("angle  " + "  ".join(f"{n:>12}" for n in names))
    levels = report.series(names[0], "rotate", metric)[0]
    for i, angle in enumerate(levels):
        vals = [report.series(n, "rotate", metric)[1][i] for n in names]
        print(f"{angle:5.0f}  " + "  ".join(f"{v:12.4f}" for v in vals))

# %% [markdown]
# ## What to look for
#
# - Accuracy falls with angle for every method.
# - Temperature scaling has the lowest ECE at angle 0, yet under heavy
#   rotation its ECE is above the ensemble's: calibration on i.i.d.
#   validation data does not carry over to shifted data.
# - The ensemble's Brier score stays within about 1e-3 of vanilla at large
#   angles but is not uniformly below it on this dataset. The members agree
#   on rotated inputs because the rotated images still resemble a training
#   class, so averaging adds little.

# %% [markdown]
# ## Out-of-distribution noise images
#
# No OOD image belongs to any class, so a sensible model should be less
# certain on them than on the clean test set.

# %%
for n in names:
    ood = report.value(n, "ood", 0, "mean_entropy")
    ind = report.value(n, "rotate", 0, "mean_entropy")
    print(f"{n:>12}: entropy test {ind:.3f}  ood {ood:.3f}")
print(sorted(p.name for p in (out / "curves").glob("vanilla__ood*")))
