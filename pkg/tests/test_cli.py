import csv
import subprocess
import sys

import pytest

from spdc.cli import EXIT_CHECK, EXIT_OK, EXIT_SINGULAR, EXIT_TAMPER, EXIT_USAGE, main
from spdc.matrix_core import DetValue
from spdc.netsim import Trace, TraceEvent


def fixture_det(fixtures):
    fields = dict(line.split("=") for line in (fixtures / "matrix8.det").read_text().split())
    return DetValue(int(fields["sign"]), float(fields["log_abs"]))


def report_fields(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


def test_run_fixture(fixtures, tmp_path):
    out = tmp_path / "report.txt"
    trace = tmp_path / "trace.txt"
    code = main(["run", str(fixtures / "matrix8.txt"), "--servers", "2", "--method", "Q3",
                 "--out", str(out), "--trace-out", str(trace)])
    assert code == EXIT_OK
    fields = report_fields(out)
    got = DetValue(int(fields["det_sign"]), float(fields["det_log_abs"]))
    assert got.isclose(fixture_det(fixtures), rel=1e-8)
    assert fields["auth_verdict"] == "1" and fields["pad"] == "0"
    assert Trace.from_text(trace.read_text()).n_servers == 2


def test_run_with_fault(fixtures, tmp_path):
    code = main(["run", str(fixtures / "matrix8.txt"), "--servers", "2",
                 "--fault", "server=2,block=U_22,rel=1e-2", "--out", str(tmp_path / "r.txt")])
    assert code == EXIT_TAMPER
    assert not (tmp_path / "r.txt").exists()


@pytest.mark.parametrize("name", ["nonsquare.txt", "badtoken.txt", "shortrow.txt", "missing.txt"])
def test_run_bad_input(fixtures, name, capsys):
    assert main(["run", str(fixtures / name)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "error" in err
    if name == "badtoken.txt":
        assert "line 3, column 2" in err


def test_run_singular(tmp_path):
    path = tmp_path / "ones.txt"
    path.write_text("4 4\n" + "1 1 1 1\n" * 4)
    assert main(["run", str(path), "--max-retries", "1"]) == EXIT_SINGULAR


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["run"],
        ["run", "m.txt", "--servers", "x"],
        ["run", "m.txt", "--lambda1", "zz"],
        ["run", "m.txt", "--fault", "server=2"],
        ["run", "m.txt", "--mode", "ABC"],
        ["launch"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_run_rejects_server_list(fixtures):
    assert main(["run", str(fixtures / "matrix8.txt"), "--servers", "2,3"]) == EXIT_USAGE


def test_run_is_reproducible(fixtures, tmp_path):
    outputs = []
    for k in range(2):
        args = ["run", str(fixtures / "matrix8.txt"), "--servers", "3", "--seed", "7",
                "--lambda1", "aa55", "--lambda2", "55aa",
                "--out", str(tmp_path / f"r{k}"), "--trace-out", str(tmp_path / f"t{k}"),
                "--metrics-out", str(tmp_path / f"m{k}"), "--key-out", str(tmp_path / f"k{k}")]
        assert main(args) == EXIT_OK
        outputs.append([(tmp_path / f"{p}{k}").read_bytes() for p in "rtmk"])
    assert outputs[0] == outputs[1]
    assert outputs[0][3].startswith(b"lambda1=")


def test_bench_columns(tmp_path):
    path = tmp_path / "metrics.csv"
    assert main(["bench", "--sizes", "8,16,32", "--servers", "2", "--metrics-out", str(path)]) == EXIT_OK
    rows = list(csv.DictReader(path.open()))
    assert path.read_text().splitlines()[0] == (
        "n,N,method,cipher_flops,max_server_flops,critical_path_flops,"
        "auth_flops,decipher_flops,messages,reals_sent,verdict"
    )
    assert [int(r["cipher_flops"]) for r in rows] == [64, 256, 1024]
    assert all(int(r["decipher_flops"]) <= 2 * int(r["n"]) for r in rows)


def test_bench_critical_path(tmp_path):
    path = tmp_path / "metrics.csv"
    assert main(["bench", "--sizes", "48", "--servers", "2,3,4", "--out", str(path)]) == EXIT_OK
    paths = [int(r["critical_path_flops"]) for r in csv.DictReader(path.open())]
    assert paths[0] > paths[1] > paths[2]


def test_trace_command(fixtures, tmp_path, capsys):
    assert main(["trace", str(fixtures / "trace_n3.txt")]) == EXIT_OK
    assert "no violations" in capsys.readouterr().out
    trace = Trace.from_text((fixtures / "trace_n3.txt").read_text())
    trace.events.insert(4, TraceEvent(1, 1, 3, "U_BLOCKS", 4, ("U_11",)))
    bad = tmp_path / "bad.json"
    bad.write_text(trace.to_json())
    assert main(["trace", str(bad)]) == EXIT_CHECK
    assert "non-adjacent transfer" in capsys.readouterr().out
    garbage = tmp_path / "garbage.txt"
    garbage.write_text("hello\n")
    assert main(["trace", str(garbage)]) == EXIT_USAGE


def test_verify_subset(capsys):
    assert main(["verify", "--only", "1,6,7"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and all(line.startswith("[PASS]") for line in lines)


def test_module_entry_point(fixtures):
    proc = subprocess.run(
        [sys.executable, "-m", "spdc", "run", str(fixtures / "matrix8.txt")],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert "auth_verdict=1" in proc.stdout
