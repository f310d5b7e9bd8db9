# %% [markdown]
# Per-slice nonverbal features from facial action units and head pose,
# and turn-taking degrees from speech intervals.

# %%
from curiodyn.nonverbal import FrameObservation, classify_affect, dominant_affect, slice_features
from curiodyn.timeline import SliceGrid
from curiodyn.turntaking import TurnMetrics, segment_turns, turn_metrics

# %%
for aus in [{"AU6", "AU12"}, {"AU1", "AU2", "AU5", "AU26"}, {"AU4", "AU7"},
            {"AU7", "AU12", "AU25", "AU26"}, set()]:
    print(sorted(aus), "->", classify_affect(FrameObservation("p", 0, aus)))

# %%
# One 10 s slice at 1 fps: mostly smiling, a couple of low-confidence frames.
frames = [FrameObservation("p", 1000 * i, {"AU6", "AU12"} if i < 6 else {"AU4", "AU7"},
                           pitch=0.1 * i, confidence=0.95 if i % 4 else 0.5)
          for i in range(10)]
print("dominant affect:", dominant_affect(frames))
feats = slice_features(frames, "p", SliceGrid(1, 10.0))
for s in feats:
    print(f"  {s.behavior.value:28s} {s.values[0]:.3f}")

# %%
speech = [("A", 0, 2000), ("B", 2600, 5000), ("A", 5100, 6000), ("C", 7000, 9500),
          ("A", 9800, 12000)]
turns = segment_turns(speech)
for t in turns:
    print(t)

# %%
for who in "ABC":
    m = turn_metrics(turns, who, (0, 10_000))
    print(who, m, f"in={m.indegree:.3f} out={m.outdegree:.3f}")

print("activity 2, silence 4 ->", TurnMetrics(2, 4, 0, 0).indegree)
print("equality 4, talk 9    ->", TurnMetrics(0, 0, 4, 9).outdegree)
