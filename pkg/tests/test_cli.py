import json
import math

import numpy as np
import pytest

from ercdenoise.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, format_report, run_cli
from ercdenoise.io import read_image, write_mask, write_raw

ACER_UC = """ACER,UC
33.2,30.6
27.5,25.9
29.2,26.9
"""


def run(capsys, *argv):
    code = run_cli([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """phantom -> denoise (true scale map) -> metrics, run once per module."""
    d = tmp_path_factory.mktemp("pipe")
    assert run_cli(["phantom", "--out", str(d), "--seed", "3"]) == EXIT_OK
    assert run_cli(["denoise", str(d / "noisy.raw"), "--scale-map", str(d / "scale_map.raw"),
                    "--out", str(d / "den.raw")]) == EXIT_OK
    return d


def test_phantom_writes_all_outputs(pipeline):
    for name in ["ground_truth.raw", "noisy.raw", "scale_map.raw", "background_mask.pgm",
                 "prostate_mask.pgm", "gland_mask.pgm"]:
        assert (pipeline / name).stat().st_size > 0
    assert read_image(pipeline / "noisy.raw").spacing_mm == pytest.approx(0.6)


def test_metrics_report_is_finite_and_improved(pipeline, capsys):
    base = ["--background", pipeline / "background_mask.pgm",
            "--foreground", pipeline / "prostate_mask.pgm"]
    code, noisy, _ = run(capsys, "metrics", pipeline / "noisy.raw", *base)
    assert code == EXIT_OK
    code, den, _ = run(capsys, "metrics", pipeline / "den.raw", *base,
                       "--reference", pipeline / "noisy.raw", "--edge", pipeline / "gland_mask.pgm")
    assert code == EXIT_OK
    before, after = json.loads(noisy)["metrics"], json.loads(den)["metrics"]
    for v in after.values():
        assert math.isfinite(v)
    assert after["snr_db_background"] > before["snr_db_background"]
    assert after["cnr_db"] > before["cnr_db"]
    assert 0.0 < after["edge_preservation"] <= 1.0


def test_report_key_order(pipeline, capsys):
    code, out, _ = run(capsys, "metrics", pipeline / "noisy.raw",
                       "--background", pipeline / "background_mask.pgm")
    assert list(json.loads(out)) == ["inputs", "config_echo", "metrics", "timings_ms"]


def test_report_maps_non_finite_to_null():
    text = format_report({}, {}, {"a": float("nan"), "b": 1.0 / 3.0}, {})
    assert json.loads(text)["metrics"] == {"a": None, "b": 0.3333333333}


def test_denoise_is_reproducible_across_runs_and_threads(pipeline, tmp_path, capsys):
    noisy = read_image(pipeline / "noisy.raw").pixels[150:214, 90:170]
    scale = read_image(pipeline / "scale_map.raw").pixels[150:214, 90:170]
    write_raw(tmp_path / "n.raw", noisy, 0.6)
    write_raw(tmp_path / "s.raw", scale, 0.6)
    outputs = []
    for k, threads in enumerate([1, 1, 8]):
        dst = tmp_path / f"out{k}.raw"
        code, _, _ = run(capsys, "denoise", tmp_path / "n.raw", "--scale-map", tmp_path / "s.raw",
                         "--threads", threads, "--seed", 9, "--out", dst)
        assert code == EXIT_OK
        outputs.append(dst.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]


def test_seed_changes_output(pipeline, tmp_path, capsys):
    noisy = read_image(pipeline / "noisy.raw").pixels[150:182, 90:122]
    write_raw(tmp_path / "n.raw", noisy, 0.6)
    write_raw(tmp_path / "s.raw", np.full_like(noisy, 9.0), 0.6)
    results = []
    for seed in (1, 2):
        run(capsys, "denoise", tmp_path / "n.raw", "--scale-map", tmp_path / "s.raw",
            "--seed", seed, "--out", tmp_path / f"o{seed}.raw")
        results.append((tmp_path / f"o{seed}.raw").read_bytes())
    assert results[0] != results[1]


def test_mismatched_scale_map(tmp_path, capsys):
    write_raw(tmp_path / "n.raw", np.ones((10, 12)))
    write_raw(tmp_path / "s.raw", np.ones((10, 11)))
    code, _, err = run(capsys, "denoise", tmp_path / "n.raw", "--scale-map", tmp_path / "s.raw",
                       "--out", tmp_path / "o.raw")
    assert code == EXIT_DATA
    assert "dimensions" in err


def test_ttest_on_table(tmp_path, capsys):
    (tmp_path / "t.csv").write_text(ACER_UC)
    code, out, _ = run(capsys, "ttest", tmp_path / "t.csv")
    assert code == EXIT_OK
    report = json.loads(out)
    assert report["metrics"]["p_value"] == pytest.approx(0.02, abs=0.03)
    assert report["metrics"]["n"] == 3
    assert report["inputs"]["method"] == "ACER"


def test_ttest_selects_columns(tmp_path, capsys):
    (tmp_path / "t.csv").write_text("x,UC,ACER\n0,30.6,33.2\n0,25.9,27.5\n0,26.9,29.2\n")
    code, out, _ = run(capsys, "ttest", tmp_path / "t.csv", "--columns", "ACER", "UC")
    assert code == EXIT_OK
    assert json.loads(out)["metrics"]["mean_difference"] == pytest.approx(2.1666666667)


def test_scores_subcommand(tmp_path, capsys):
    lines = ["method,evaluator,slice,score"]
    for ev in "AB":
        for sl in range(3):
            lines += [f"m1,{ev},{sl},4", f"m2,{ev},{sl},{1 + sl}"]
    (tmp_path / "s.csv").write_text("\n".join(lines) + "\n")
    code, out, _ = run(capsys, "scores", tmp_path / "s.csv", "--out", tmp_path / "r.json")
    assert code == EXIT_OK and out == ""
    values = json.loads((tmp_path / "r.json").read_text())["metrics"]
    assert values["m1"]["median"] == 4.0 and values["m1"]["rank_sum"] == 24
    assert values["m1"]["f_pseudosigma"] == 0.0
    assert values["m2"]["median"] == 2.0


def test_scores_rejects_incomplete_grid(tmp_path, capsys):
    (tmp_path / "s.csv").write_text("method,evaluator,slice,score\nm1,A,1,3\nm2,A,2,3\n")
    code, _, err = run(capsys, "scores", tmp_path / "s.csv")
    assert code == EXIT_DATA and "every evaluator/slice" in err


def test_profile_subcommand(capsys):
    code, out, _ = run(capsys, "profile", "--max-distance", 2, "--step", 0.5)
    assert code == EXIT_OK
    lines = out.strip().splitlines()
    assert lines[0] == "distance_mm,gain"
    assert len(lines) == 6
    gains = [float(l.split(",")[1]) for l in lines[1:]]
    assert gains == sorted(gains, reverse=True)


@pytest.mark.parametrize("argv", [
    ["denoise", "--bogus"],
    ["nosuchcommand"],
    [],
    ["profile", "--seed", "-3"],
    ["profile", "--threads", "0"],
    ["profile", "--step", "0"],
])
def test_usage_errors_exit_1(argv, capsys):
    code, _, err = run(capsys, *argv)
    assert code == EXIT_USAGE
    assert err


def test_bad_config_exits_1(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("sampler.nope = 1\n")
    code, _, err = run(capsys, "profile", "--config", tmp_path / "c.cfg")
    assert code == EXIT_USAGE and "unknown key" in err


def test_unreadable_input_exits_2(tmp_path, capsys):
    (tmp_path / "bad.raw").write_bytes(b"garbage")
    code, _, err = run(capsys, "denoise", tmp_path / "bad.raw", "--out", tmp_path / "o.raw")
    assert code == EXIT_DATA
    code, _, _ = run(capsys, "denoise", tmp_path / "missing.raw", "--out", tmp_path / "o.raw")
    assert code == EXIT_DATA


def test_empty_mask_fails_at_metric_time(tmp_path, capsys):
    write_raw(tmp_path / "i.raw", np.ones((6, 6)))
    write_mask(tmp_path / "m.pgm", np.zeros((6, 6), bool))
    code, _, err = run(capsys, "metrics", tmp_path / "i.raw", "--background", tmp_path / "m.pgm")
    assert code == EXIT_DATA and "empty" in err
