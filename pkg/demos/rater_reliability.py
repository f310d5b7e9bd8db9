# %% [markdown]
# Crowd ratings of curiosity: picking a reliable rater subset per HIT,
# correcting for rater habits, and measuring agreement.

# %%
import numpy as np

from curiodyn.annotation import (Rating, RatingSet, bias_corrected_label, filter_raters, icc,
                                 krippendorff_alpha, rater_profiles, select_subset)

rng = np.random.default_rng(0)
truth = rng.integers(0, 3, size=12)

# %%
# Three careful raters, one who mostly answers "1" and does it fast.
def rate(rater, label, seconds):
    return Rating(rater, int(label), seconds)

sets = []
for k, t in enumerate(truth):
    noisy = [np.clip(t + rng.choice([-1, 0, 0, 0, 1]), 0, 2) for _ in range(3)]
    ratings = [rate(r, v, 30 + rng.normal()) for r, v in zip("ABC", noisy)]
    ratings.append(rate("D", 1 if rng.random() < 0.8 else t, 4.0))
    sets.append(RatingSet("hit-1", k, ratings, "P1"))

kept = filter_raters(sets)
print("raters after the speed filter:", sorted({r for s in kept for r in s.raters}))

# %%
report = select_subset(sets)
print("best subset", report.chosen_subset, "ICC", round(report.icc, 3))
for subset, score in sorted(report.subset_icc.items(), key=lambda kv: -np.nan_to_num(kv[1], nan=-9)):
    print(f"  {','.join(subset):8s} {score:6.3f}")

# %%
profiles = rater_profiles(kept)
labels = [bias_corrected_label(s, profiles) for s in kept]
print("truth    ", truth.tolist())
print("corrected", labels)

# %%
matrix = np.array([[r.label for r in s.ratings] for s in kept], dtype=float)
print("ICC(2,1) over kept raters:", round(icc(matrix), 3))
print("Krippendorff alpha (nominal):", round(krippendorff_alpha(matrix), 3))
