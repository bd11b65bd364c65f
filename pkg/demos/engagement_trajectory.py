"""From a simulated session to a continuous engagement estimate.

A synthetic subject plays the 35-minute Go/No-Go game while EEG is recorded.
We label the first and last minutes, train a small network on those trials,
then slide a 7-minute window over the whole session and compare the fraction
of "engaged" trials with the subject's periodic self-reports.

The recording is kept light (16 channels at 256 Hz) so this runs in about a
minute on a laptop core.

    python demos/engagement_trajectory.py
"""

import numpy as np

from engage.model import ArchitectureConfig, build_model
from engage.pipeline import prepare_recording
from engage.sliding import correlate_with_feedback, trajectory_from_trials
from engage.synth import SessionConfig, SubjectModel, simulate_session
from engage.training import TrainConfig, train

subject = SubjectModel.sample("S01", seed=2020)
recording, behaviour, history = simulate_session(subject, SessionConfig(fs_hz=256.0, n_channels=16))
print(f"{recording.subject_id}: {recording.n_channels} channels, {recording.duration_s / 60:.0f} min, "
      f"{len(behaviour)} game trials, {len(history)} difficulty settings")

correct = np.array([b.correct for b in behaviour])
half = len(correct) // 2
print(f"game accuracy: first half {correct[:half].mean():.2f}, second half {correct[half:].mean():.2f}")

# Every 3-s segment is preprocessed; only the early and late ones get labels.
labeled, trials = prepare_recording(recording, keep_all=True)
n_dis, n_eng = labeled.counts()
print(f"{len(trials)} EEG trials, {n_eng} labeled engaged, {n_dis} labeled disengaged")

arch = ArchitectureConfig(conv_channels=(8, 8, 16, 16), input_shape=(16, 600))
model = build_model(arch, seed=0)
train(model, labeled, TrainConfig(epochs=30, batch_size=32))

trajectory = trajectory_from_trials(model, trials, recording.duration_s)
reports = dict(recording.feedback)
print("\n window (min)   trials   engaged")
for w in trajectory:
    print(f"  {w.start_s / 60:4.1f}-{w.end_s / 60:4.1f}     {w.n_trials:4d}     {w.fraction_engaged:6.2f}")
print("self-reported resistance:", ", ".join(f"{t / 60:.0f} min: {r}" for t, r in reports.items()))

rho = correlate_with_feedback(trajectory, recording.feedback)
print(f"\ncorrelation between engaged fraction and 10 - resistance: {rho:.3f}")
