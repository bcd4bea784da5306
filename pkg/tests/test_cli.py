import csv
import io
import json

import pytest

from orbiqe import __version__, cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_spectrum_sphere_321_rows(capsys):
    code, out, _ = run(capsys, "spectrum", "--sphere-n", "3", "--l-max", "30")
    assert code == 0
    table = rows(out)
    assert table[0] == ["index", "lambda", "cluster"]
    assert len(table) == 1 + 321


def test_byte_identical_reruns(capsys, tmp_path):
    args = ["ergodicity", "--triangle", "2,3,7", "--observable", "bump", "--T", "20", "--n-starts", "4",
            "--seed", "17"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert cli.main(args[:-1] + ["18", "--out", str(b)]) == 0
    assert a.read_bytes() != b.read_bytes()


def test_weyl_json_pillowcase(capsys):
    code, out, _ = run(capsys, "weyl", "--pillowcase", "--lambda-max", "200", "--format", "json")
    doc = json.loads(out)
    assert set(doc) == {"config", "results", "version"}
    assert doc["version"] == __version__
    assert doc["results"]["relative_error"] < 0.03


def test_reals_round_trip(capsys):
    _, out, _ = run(capsys, "spectrum", "--pillowcase", "--lambda-max", "5")
    vals = [float(r[1]) for r in rows(out)[1:]]
    assert vals[3] == 2 ** 0.5


@pytest.mark.parametrize("argv, header", [
    (["local-weyl", "--sphere-n", "2", "--l-max", "40", "--observable", "cos2_theta"],
     ["C", "predicted", "relative_error", "exponent", "n_points"]),
    (["pointwise-weyl", "--sphere-n", "3", "--l-max", "20"], ["lambda", "measured", "predicted", "ratio"]),
    (["qe", "--pillowcase", "--lambda-max", "20", "--observable", "xi1sq"],
     ["lambda", "count", "variance", "excluded_fraction"]),
    (["defect", "--pillowcase", "--lambda-max", "10", "--observable", "cos_x1"], ["lambda", "count", "defect", "ratio"]),
    (["egorov", "--m", "1,0"], ["m1", "m2", "k_min", "k_max", "max_mismatch"]),
    (["geodesic", "--sphere-n", "2", "--base", "1,0,0", "--direction", "0.5", "--t", "3"],
     ["t", "start_x", "start_y", "start_z", "start_direction", "end_x", "end_y", "end_z", "end_direction"]),
    (["birkhoff", "--pillowcase", "--observable", "cos_x1", "--T", "50"], ["T", "dt", "average"]),
    (["lyapunov", "--sphere-n", "1", "--T", "100"], ["exponent", "half_width", "T", "renormalizations"]),
    (["ergodicity", "--pillowcase", "--T", "10", "--n-starts", "3"], ["start", "average"]),
    (["zeta", "--pillowcase", "--lambda-max", "100"], ["residue", "uncertainty", "sign", "C_A", "tauberian"]),
])
def test_output_schemas(capsys, argv, header):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    assert rows(out)[0] == header


def test_config_file_and_override(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep\nbackend = sphere\nsphere_n = 2\nl_max = 3\n")
    _, out, _ = run(capsys, "spectrum", "--config", str(cfg))
    assert len(rows(out)) == 1 + (1 + 1 + 3 + 3)
    _, out2, _ = run(capsys, "spectrum", "--config", str(cfg), "--l-max", "1")
    assert len(rows(out2)) == 1 + 2


@pytest.mark.parametrize("argv", [
    ["spectrum", "--sphere-n", "0"],
    ["spectrum", "--triangle", "2,3,6"],
    ["spectrum", "--triangle", "2,3"],
    ["birkhoff", "--pillowcase", "--observable", "nope"],
    ["birkhoff", "--pillowcase", "--T", "-1"],
    ["nonsense"],
    ["zeta", "--triangle", "2,3,7"],
    ["spectrum", "--seed", "-4"],
])
def test_invalid_config_single_line_error(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code != 0 and out == ""
    lines = err.strip().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["error"] == "config"


def test_numeric_failure_surfaces(capsys):
    # a top decade with too few eigenvalues cannot carry a Weyl fit
    code, out, err = run(capsys, "weyl", "--sphere-n", "1", "--l-max", "4")
    assert code == 3
    doc = json.loads(err)
    assert doc["error"] == "numeric" and doc["type"] == "WeylFitError"


def test_mesh_out_in_roundtrip(capsys, tmp_path):
    m1, m2 = tmp_path / "a.mesh", tmp_path / "b.mesh"
    _, out1, _ = run(capsys, "spectrum", "--triangle", "2,3,7", "--refine", "3", "--k", "10", "--mesh-out", str(m1))
    _, out2, _ = run(capsys, "spectrum", "--triangle", "2,3,7", "--k", "10", "--mesh-in", str(m1),
                     "--mesh-out", str(m2))
    assert out1 == out2
    assert m1.read_bytes() == m2.read_bytes()
    assert m1.read_text().startswith("mesh v=")
