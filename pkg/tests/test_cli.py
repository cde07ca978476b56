import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from sfmarket.cli import run

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def call(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_nash_fig2(capsys):
    code, out, err = call(capsys, "nash", SCENARIOS / "fig2_c0.json")
    assert code == 0
    nodes = [r for r in rows_of(out) if r["scope"] == "node"]
    assert [float(r["price"]) for r in nodes] == pytest.approx([1.320513, 1.164056], abs=1e-5)
    assert "verified=true" in err


def test_pivotal_refused(capsys):
    code, out, err = call(capsys, "nash", SCENARIOS / "pivotal.json")
    assert code == 1
    assert out == ""
    assert "pivotal supplier present" in err and "big" in err


def test_indices_flag_pivotal(capsys):
    code, out, _ = call(capsys, "indices", SCENARIOS / "pivotal.json")
    assert code == 0
    big = next(r for r in rows_of(out) if r["id"] == "big")
    assert big["pivotal"] == "true"
    assert big["lerner_bound"] == ""


def test_envelope(capsys):
    code, out, err = call(capsys, "envelope", SCENARIOS / "gb_envelope.csv")
    assert code == 0
    rows = rows_of(out)
    assert [r["flag"] for r in rows] == ["false", "true", "false"]
    assert float(rows[1]["exceedance"]) == pytest.approx(12)
    assert rows[2]["status"] == "no bound"
    assert "flagged=1" in err


def test_empty_envelope_is_header_only(capsys, tmp_path):
    src = tmp_path / "empty.csv"
    src.write_text("rsi,price\n")
    code, out, _ = call(capsys, "envelope", src)
    assert code == 0
    assert out == "rsi,price,mc,ms,bound,flag,exceedance,status\n"


@pytest.mark.parametrize("content", ["{", "[]", '{"network": {"nodes": []}, "producers": []}'])
def test_malformed_scenario(capsys, tmp_path, content):
    src = tmp_path / "bad.json"
    src.write_text(content)
    code, out, err = call(capsys, "nash", src)
    assert code == 2
    assert err.startswith("error:")


def test_missing_file(capsys, tmp_path):
    code, _, err = call(capsys, "dispatch", tmp_path / "none.json")
    assert code == 2 and "error:" in err


def test_bad_bids(capsys):
    code, _, err = call(capsys, "dispatch", SCENARIOS / "fig2_c0.json", "--bids", "1,x")
    assert code == 2


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        run(["no-such-command"])
    assert exc.value.code == 2


def test_output_is_deterministic(tmp_path):
    paths = []
    for k in range(2):
        p = tmp_path / f"out{k}.csv"
        assert run(["nash", str(SCENARIOS / "triangle.json"), "-o", str(p)]) == 0
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_json_keeps_full_precision(capsys):
    code, out, _ = call(capsys, "nash", SCENARIOS / "fig2_c03.json", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert doc["columns"][:3] == ["scope", "id", "node"]
    node1 = doc["rows"][0]
    assert node1[3] == pytest.approx(0.7, abs=1e-8)
    assert node1[4] == pytest.approx(1.174129353, abs=1e-8)


def test_failed_run_leaves_no_file(capsys, tmp_path):
    target = tmp_path / "out.csv"
    code, _, _ = call(capsys, "nash", SCENARIOS / "pivotal.json", "-o", target)
    assert code == 1
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []


def test_verify_round_trip(capsys, tmp_path):
    eq = tmp_path / "eq.csv"
    assert run(["nash", str(SCENARIOS / "triangle.json"), "-o", str(eq)]) == 0
    capsys.readouterr()
    code, out, err = call(capsys, "verify", SCENARIOS / "triangle.json", eq)
    assert code == 0 and "verified=true" in err
    # raise one bid by 10%: the check must fail
    rows = rows_of(eq.read_text())
    target = next(r for r in rows if r["scope"] == "producer")
    target["theta"] = str(float(target["theta"]) * 1.1)
    with eq.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    code, _, err = call(capsys, "verify", SCENARIOS / "triangle.json", eq)
    assert code == 1 and "verified=false" in err


def test_braess_sweep(capsys):
    code, out, err = call(capsys, "braess", "--c-max", "0.8")
    assert code == 0
    rows = rows_of(out)
    assert len(rows) == 41
    assert "increasing" in err and "constant" in err


def test_poa_example(capsys):
    code, out, err = call(capsys, "poa-example", "--t", "1.2", "--format", "json")
    assert code == 0
    meta = json.loads(out)["meta"]
    assert meta["verified"] is True
    assert meta["poa_lower_bound"] == pytest.approx(5 / 3)


def test_ce_and_dispatch(capsys):
    code, out, _ = call(capsys, "ce", SCENARIOS / "fig2_c03.json")
    assert code == 0
    code, out, err = call(capsys, "dispatch", SCENARIOS / "fig2_c03.json")
    assert code == 0 and "objective=2.105" in err


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "sfmarket.cli", "envelope",
                           str(SCENARIOS / "gb_envelope.csv")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("rsi,price")
