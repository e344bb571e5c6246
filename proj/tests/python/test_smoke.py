import pytest

import canfp


def test_frame_line_round_trip():
    line = "1481492674.736055 0x00c4 000 0x8 0x00 0x11 0x22 0x33 0x44 0x55 0x66 0x77"
    frame = canfp.parse_frame_line(line)
    assert frame.timestamp_us == 1481492674736055
    assert frame.can_id == 0x0C4
    assert frame.data == [0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77]
    assert canfp.parse_frame_line(canfp.format_frame(frame)) == frame


def test_errors_carry_a_code():
    with pytest.raises(canfp.Error) as info:
        canfp.parse_frame_line("garbage")
    assert info.value.code
    with pytest.raises(canfp.Error) as info:
        canfp.make_windows(3, 4, 1)
    assert info.value.code


def test_lenient_parse_reports_bad_lines():
    text = "1.000000 0x0100 000 0x1 0x01\nnot a frame\n2.000000 0x0100 000 0x1 0x02\n"
    frames, errors = canfp.parse_log(text)
    assert len(frames) == 2
    assert [no for no, _ in errors] == [2]


def test_conv1d_neighbor_differences():
    assert canfp.conv1d([1, 3, 6], [1, -1]) == [2, 3]


def test_windows_match_closed_form():
    for n_total, n, shift in [(10, 4, 2), (7, 7, 3), (100, 9, 5)]:
        windows = canfp.make_windows(n_total, n, shift)
        assert len(windows) == (n_total - n) // shift + 1
        assert windows[0] == (1, n)


def test_synthetic_trace_filters_constants_and_counters():
    profile = {"driver": "d", "accel_aggression": 0.5, "brake_sharpness": 0.5, "pedal_jitter_hz": 1.0,
               "steering_smoothness": 0.5, "reaction_lag_s": 0.5}
    frames = canfp.gen_trace(profile, 120.0, 3)
    verdicts = canfp.classify_channels(frames)
    assert verdicts["0x00c4:0"] == "kept"
    assert sorted(set(verdicts.values())) == ["constant", "counter", "kept"]
    channels = canfp.extract_channels(frames)
    assert set(channels) == set(verdicts)
    text = canfp.write_log(frames[:5])
    assert canfp.parse_log(text)[0] == frames[:5]


def test_gradcheck_passes():
    checks = canfp.gradcheck()
    assert checks and all(passed for _, _, _, passed in checks)


def test_published_reference_values():
    assert canfp.published_one_vs_all(60)[0] == 0.829
    assert canfp.published_one_vs_all(30) is None


def test_small_pipeline(tmp_path):
    canfp.set_progress(False)
    config = {
        "seed": 3,
        "out_dir": str(tmp_path / "out"),
        "synth": {"drivers": 2, "duration_s": 300, "layout": str(tmp_path / "planted.json")},
        "split": {"sample_duration_s": 20, "window_shift_s": 4, "validation_fraction": 0.25},
        "its": {"seg_len_s": 2, "kernel_s": 0.3, "conv_stride_s": 0.1, "filters1": 4, "filters2": 4,
                "pool": 2, "fc_units": 8, "lstm_hidden": 4, "max_epochs": 2},
        "mixture": {"k": 1, "batch_size": 16, "max_epochs": 3},
    }
    import json
    (tmp_path / "planted.json").write_text(json.dumps(canfp.planted_layout(1, 0.1)))
    out = canfp.run_pipeline(config, ["synth", "extract", "split", "train-its", "train-mixture", "eval"])
    assert out["channels"] == ["0x0100:0", "0x0100:1"]
    assert len(out["ranking"]) == 2
    assert {r["scenario"] for r in out["reports"]} == {"one_vs_all", "all_vs_all"}
    with pytest.raises(canfp.Error):
        canfp.run_pipeline(config, ["bogus"])
