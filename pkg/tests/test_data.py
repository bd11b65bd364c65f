import json
import struct

import numpy as np
import pytest

from engage.data import (DISENGAGED, ENGAGED, LabeledTrial, Recording, Trial, TrialDataset, assign_labels,
                         load_recording, read_manifest, save_recording, split_leave_one_out,
                         split_subject_specific, write_manifest)
from engage.errors import FormatError


def small_recording(**kw):
    x = np.arange(3 * 50, dtype=np.float32).reshape(3, 50) / 7
    args = dict(subject_id="S01", fs_hz=10.0, samples=x, feedback=[(1.0, 2), (4.0, 9)])
    args.update(kw)
    return Recording(**args)


def session_trials(sid="S01", n=700, shape=(2, 4)):
    return [Trial(sid, 3.0 * k, np.full(shape, k, np.float32)) for k in range(n)]


def test_recording_round_trip(tmp_path):
    rec = small_recording(truth=[(0.0, 1.0), (2.0, 0.5)])
    save_recording(rec, tmp_path / "r.eeg")
    back = load_recording(tmp_path / "r.eeg")
    assert back.subject_id == "S01" and back.fs_hz == 10.0
    assert back.feedback == rec.feedback and back.truth == rec.truth
    np.testing.assert_array_equal(back.samples, rec.samples)


def test_recording_layout_is_channel_major(tmp_path):
    rec = small_recording()
    path = tmp_path / "r.eeg"
    save_recording(rec, path)
    raw = path.read_bytes()
    assert raw[:4] == b"EEGR"
    version, hlen = struct.unpack("<II", raw[4:12])
    header = json.loads(raw[12:12 + hlen])
    assert version == 1 and header["n_channels"] == 3 and header["n_samples"] == 50
    payload = np.frombuffer(raw[12 + hlen:], dtype="<f4")
    np.testing.assert_array_equal(payload[:50], rec.samples[0])


def _corrupt(tmp_path, mutate):
    path = tmp_path / "r.eeg"
    save_recording(small_recording(), path)
    raw = bytearray(path.read_bytes())
    raw = mutate(raw)
    path.write_bytes(bytes(raw))
    return path


def _header_len(raw):
    return struct.unpack("<I", raw[8:12])[0]


def test_bad_magic_reports_offset_zero(tmp_path):
    path = _corrupt(tmp_path, lambda r: b"XXXX" + r[4:])
    with pytest.raises(FormatError) as err:
        load_recording(path)
    assert err.value.offset == 0


def test_bad_version_is_rejected(tmp_path):
    path = _corrupt(tmp_path, lambda r: r[:4] + struct.pack("<I", 7) + r[8:])
    with pytest.raises(FormatError) as err:
        load_recording(path)
    assert err.value.offset == 4


def test_truncated_payload_reports_where_data_ends(tmp_path):
    path = _corrupt(tmp_path, lambda r: r[:-10])
    hlen = _header_len(path.read_bytes())
    with pytest.raises(FormatError) as err:
        load_recording(path)
    # 150 samples declared, 147 whole samples present
    assert err.value.offset == 12 + hlen + 4 * 147


def test_trailing_bytes_are_rejected(tmp_path):
    path = _corrupt(tmp_path, lambda r: r + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_recording(path)


def test_nan_sample_offset_points_at_the_value(tmp_path):
    def put_nan(r):
        at = 12 + _header_len(r) + 4 * 61
        r[at:at + 4] = struct.pack("<f", float("nan"))
        return r
    path = _corrupt(tmp_path, put_nan)
    hlen = _header_len(path.read_bytes())
    with pytest.raises(FormatError) as err:
        load_recording(path)
    assert err.value.offset == 12 + hlen + 4 * 61


def test_malformed_header_json(tmp_path):
    def garble(r):
        r[12] = ord("!")
        return r
    with pytest.raises(FormatError) as err:
        load_recording(_corrupt(tmp_path, garble))
    assert err.value.offset == 12


@pytest.mark.parametrize("kw", [
    dict(fs_hz=0.0),
    dict(samples=np.zeros(10, np.float32)),
    dict(feedback=[(1.0, 0)]),
    dict(feedback=[(2.0, 3), (1.0, 3)]),
    dict(feedback=[(99.0, 3)]),
    dict(truth=[(0.0, 1.5)]),
])
def test_recording_validation(kw):
    with pytest.raises(ValueError):
        small_recording(**kw)


def test_recording_samples_are_read_only():
    rec = small_recording()
    with pytest.raises(ValueError):
        rec.samples[0, 0] = 1.0


def test_labeling_yields_70_engaged_and_100_disengaged():
    ds = assign_labels(session_trials())
    assert ds.counts() == (100, 70)
    onsets = {item.trial.onset_s: item.label for item in ds}
    assert onsets[30.0] == ENGAGED and onsets[237.0] == ENGAGED and 240.0 not in onsets
    assert onsets[1800.0] == DISENGAGED and onsets[2097.0] == DISENGAGED
    assert 27.0 not in onsets


def test_overlapping_label_windows_are_rejected():
    with pytest.raises(ValueError):
        assign_labels([], engaged_window=(0, 100), disengaged_window=(50, 200))


def test_invalid_label_value():
    with pytest.raises(ValueError):
        LabeledTrial(Trial("S01", 0.0, np.zeros((1, 1))), 2)


def test_dataset_arrays_adds_channel_axis():
    X, y = assign_labels(session_trials()).arrays()
    assert X.shape == (170, 1, 2, 4) and y.shape == (170,)


def test_subject_specific_split_is_4_to_1_and_disjoint():
    ds = assign_labels(session_trials())
    train, test = split_subject_specific(ds, seed=3)
    assert (len(train), len(test)) == (136, 34)
    a = {item.trial.onset_s for item in train}
    b = {item.trial.onset_s for item in test}
    assert not a & b and len(a | b) == 170
    again, _ = split_subject_specific(ds, seed=3)
    assert [i.trial.onset_s for i in again] == [i.trial.onset_s for i in train]


def test_subject_specific_split_needs_one_subject():
    ds = TrialDataset(assign_labels(session_trials("S01")).items + assign_labels(session_trials("S02")).items)
    with pytest.raises(ValueError):
        split_subject_specific(ds)


def test_leave_one_out_holds_out_exactly_one_subject():
    datasets = {s: assign_labels(session_trials(s)) for s in ("S01", "S02", "S03")}
    train, test = split_leave_one_out(datasets, "S02")
    assert train.subject_ids == {"S01", "S03"} and test.subject_ids == {"S02"}
    assert len(train) == 340 and len(test) == 170
    with pytest.raises(ValueError):
        split_leave_one_out(datasets, "S09")


def test_manifest_resolves_relative_paths(tmp_path):
    write_manifest([("S01", "S01.eeg"), ("S02", "/abs/S02.eeg")], tmp_path / "m.json")
    entries = read_manifest(tmp_path / "m.json")
    assert entries[0] == ("S01", tmp_path / "S01.eeg")
    assert str(entries[1][1]) == "/abs/S02.eeg"


def test_malformed_manifest(tmp_path):
    (tmp_path / "m.json").write_text('[{"path": "x"}]')
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "m.json")
