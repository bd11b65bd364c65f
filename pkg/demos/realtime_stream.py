"""Classifying a live sample stream, one trial every 3 seconds.

The streaming path uses causal filtering and a stateful resampler, so each
trial can be scored as soon as its last sample arrives.  Here we encode ten
minutes of a synthetic session into the binary wire format, play it back
through the stream classifier and report per-trial latency.

The same thing from the shell:

    engage stream --checkpoint model.cecn --input session.stream --out labels.jsonl

    python demos/realtime_stream.py
"""

import io
import json

import numpy as np

from engage.model import ArchitectureConfig, build_model
from engage.pipeline import prepare_recording
from engage.stream import encode_frames, encode_header, run_stream
from engage.synth import SessionConfig, SubjectModel, simulate_session
from engage.training import TrainConfig, train

subject = SubjectModel.sample("S02", seed=7)
recording, _, _ = simulate_session(subject, SessionConfig(fs_hz=256.0, n_channels=16))

model = build_model(ArchitectureConfig(conv_channels=(8, 8, 16, 16), input_shape=(16, 600)), seed=0)
train(model, prepare_recording(recording), TrainConfig(epochs=30, batch_size=32))

# replay minutes 20 to 30, keeping the original sample indices
start, stop = int(20 * 60 * recording.fs_hz), int(30 * 60 * recording.fs_hz)
wire = encode_header(recording.fs_hz, recording.n_channels) + encode_frames(recording.samples[:, start:stop], start)
print(f"stream: {len(wire) / 2**20:.1f} MB for {(stop - start) / recording.fs_hz / 60:.0f} min")

out = io.StringIO()
stats = run_stream(model, io.BytesIO(wire), out)
records = [json.loads(line) for line in out.getvalue().splitlines()]
for rec in records[::20]:
    print(f"  t={rec['t']:6.1f}s  p(engaged)={rec['p_engaged']:.2f}  label={rec['label']}  "
          f"rolling fraction={rec['window_fraction']:.2f}")

lat = np.asarray(stats.latencies_s) * 1000
print(f"{stats.trials} trials, latency median {np.median(lat):.1f} ms, p99 {stats.p99_latency_s() * 1000:.1f} ms")
