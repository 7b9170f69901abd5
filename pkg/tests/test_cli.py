import json
import os
import subprocess
import sys

import pytest

from maldicom import corpus
from maldicom.cli import main
from maldicom.polyglot import InjectionRecord, create_pe_dicom, verify_polyglot


@pytest.fixture
def gate(monkeypatch):
    monkeypatch.setenv("MALDICOM_ENABLE_INJECT", "1")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def json_lines(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def write_inputs(tmp_path, stub_len=64, seed=0):
    pe_path, dcm_path = tmp_path / "in.exe", tmp_path / "in.dcm"
    pe_path.write_bytes(corpus.make_pe(stub_len=stub_len, n_sections=2, seed=seed))
    dcm_path.write_bytes(corpus.make_dicom(seed=seed))
    return pe_path, dcm_path


# --- scan ---

def test_scan_empty_dir(tmp_path, capsys):
    code, out, _ = run(capsys, "scan", tmp_path, "--json")
    assert code == 0 and json_lines(out) == []


def test_scan_clean_dir(tmp_path, capsys):
    for i in range(3):
        (tmp_path / f"c{i}.dcm").write_bytes(corpus.make_dicom(seed=i))
    (tmp_path / "notes.txt").write_bytes(b"MZ")
    code, out, _ = run(capsys, "scan", tmp_path, "--json")
    reports = json_lines(out)
    assert code == 0 and len(reports) == 3
    assert [r["path"] for r in reports] == sorted(r["path"] for r in reports)
    assert all(r["verdict"] == "Clean" for r in reports)


def test_scan_finds_polyglot_recursively(tmp_path, capsys):
    sub = tmp_path / "a" / "b"
    sub.mkdir(parents=True)
    (tmp_path / "clean.dcm").write_bytes(corpus.make_dicom(seed=1))
    poly, _ = create_pe_dicom(corpus.make_pe(seed=1), corpus.make_dicom(seed=2))
    (sub / "evil.DCM").write_bytes(poly)
    for args in (("--json",), ("--json", "--fast"), ()):
        code, out, _ = run(capsys, "scan", tmp_path, *args)
        assert code == 3
    code, out, _ = run(capsys, "scan", tmp_path, "--json")
    verdicts = {os.path.basename(r["path"]): r["verdict"] for r in json_lines(out)}
    assert verdicts == {"clean.dcm": "Clean", "evil.DCM": "Polyglot"}


def test_scan_suspicious_exit_2(tmp_path, capsys):
    (tmp_path / "odd.dcm").write_bytes(corpus.make_dicom(seed=1, preamble=bytes(range(128))))
    code, out, _ = run(capsys, "scan", tmp_path)
    assert code == 2 and "Suspicious" in out


def test_scan_unreadable_file_is_suspicious(tmp_path, capsys):
    (tmp_path / "dangling.dcm").symlink_to(tmp_path / "missing")
    code, out, _ = run(capsys, "scan", tmp_path, "--json")
    [r] = json_lines(out)
    assert code == 2 and r["verdict"] == "Suspicious"


def test_scan_entropy_threshold_flag(tmp_path, capsys):
    pre = bytes(range(64)) * 2
    (tmp_path / "x.dcm").write_bytes(corpus.make_dicom(seed=1, preamble=pre))
    _, out, _ = run(capsys, "scan", tmp_path, "--json", "--entropy-threshold", "7.5")
    kinds = {e["kind"] for e in json_lines(out)[0]["evidence"]}
    assert "HighPreambleEntropy" not in kinds


def test_scan_missing_path(tmp_path, capsys):
    code, _, err = run(capsys, "scan", tmp_path / "nope")
    assert code == 1 and "error" in err


# --- inject / extract ---

def test_inject_gated(tmp_path, capsys, monkeypatch):
    pe_path, dcm_path = write_inputs(tmp_path)
    monkeypatch.delenv("MALDICOM_ENABLE_INJECT", raising=False)
    code, _, err = run(capsys, "inject", pe_path, dcm_path, tmp_path / "o.dcm", "--i-understand-research-use")
    assert code == 1 and "disabled" in err
    monkeypatch.setenv("MALDICOM_ENABLE_INJECT", "1")
    code, _, err = run(capsys, "inject", pe_path, dcm_path, tmp_path / "o.dcm")
    assert code == 1 and "--i-understand-research-use" in err
    assert not (tmp_path / "o.dcm").exists()


def test_inject_extract_round_trip(tmp_path, capsys, gate):
    pe_path, dcm_path = write_inputs(tmp_path)
    out = tmp_path / "poly.dcm"
    code, text, _ = run(capsys, "inject", pe_path, dcm_path, out, "--i-understand-research-use", "--json")
    assert code == 0
    assert json_lines(text)[0]["verified"] is True
    assert verify_polyglot(out.read_bytes()).all_true
    record = tmp_path / "poly.dcm.record.json"
    assert InjectionRecord.from_json(record.read_text()).payload_tag.element == 0x1001

    code, _, _ = run(capsys, "extract", out, record, tmp_path / "back.exe")
    assert code == 0
    assert (tmp_path / "back.exe").read_bytes() == pe_path.read_bytes()


def test_inject_refuses_overwrite(tmp_path, capsys, gate):
    pe_path, dcm_path = write_inputs(tmp_path)
    out = tmp_path / "poly.dcm"
    out.write_bytes(b"keep")
    code, _, err = run(capsys, "inject", pe_path, dcm_path, out, "--i-understand-research-use")
    assert code == 1 and "--force" in err and out.read_bytes() == b"keep"
    code, _, _ = run(capsys, "inject", pe_path, dcm_path, out, "--i-understand-research-use", "--force")
    assert code == 0 and out.read_bytes() != b"keep"


def test_inject_missing_input(tmp_path, capsys, gate):
    code, _, err = run(capsys, "inject", tmp_path / "x.exe", tmp_path / "y.dcm", tmp_path / "o.dcm",
                       "--i-understand-research-use")
    assert code == 1 and "cannot read" in err


def test_inject_parser_error_typed(tmp_path, capsys, gate):
    pe_path, dcm_path = write_inputs(tmp_path)
    pe_path.write_bytes(b"not a pe" * 20)
    code, _, err = run(capsys, "inject", pe_path, dcm_path, tmp_path / "o.dcm", "--i-understand-research-use")
    assert code == 1 and "BadMzMagic" in err


def test_inject_payload_tag_and_dump(tmp_path, capsys, gate):
    pe_path, dcm_path = write_inputs(tmp_path)
    code, _, _ = run(capsys, "inject", pe_path, dcm_path, tmp_path / "o.dcm", "--i-understand-research-use",
                     "--payload-tag", "0013,10AB", "--dump-intermediate", tmp_path / "stage.dcm")
    assert code == 0 and (tmp_path / "stage.dcm").exists()
    doc = json.loads((tmp_path / "o.dcm.record.json").read_text())
    assert doc["payload_tag"] == "0013,10AB"
    code, _, err = run(capsys, "inject", pe_path, dcm_path, tmp_path / "p.dcm", "--i-understand-research-use",
                       "--payload-tag", "0010,0010")
    assert code == 1 and "EvenGroupTag" in err


def test_extract_reports_lost_bytes(tmp_path, capsys, gate):
    pe_path, dcm_path = write_inputs(tmp_path, stub_len=100)
    out = tmp_path / "poly.dcm"
    run(capsys, "inject", pe_path, dcm_path, out, "--i-understand-research-use")
    code, text, _ = run(capsys, "extract", out, tmp_path / "poly.dcm.record.json", tmp_path / "b.exe", "--json")
    assert code == 0 and json_lines(text)[0]["lost_stub_bytes"] == 36


def test_extract_corrupted_record(tmp_path, capsys, gate):
    pe_path, dcm_path = write_inputs(tmp_path)
    out = tmp_path / "poly.dcm"
    run(capsys, "inject", pe_path, dcm_path, out, "--i-understand-research-use")
    record = tmp_path / "poly.dcm.record.json"
    doc = json.loads(record.read_text())
    doc["pe_body_offset"] += 2
    record.write_text(json.dumps(doc))
    code, _, err = run(capsys, "extract", out, record, tmp_path / "b.exe")
    assert code == 1 and "RecordMismatch" in err
    record.write_text("not json")
    code, _, _ = run(capsys, "extract", out, record, tmp_path / "c.exe")
    assert code == 1


# --- triage ---

def test_train_eval_reproduce(tmp_path, capsys, sample_csv):
    model = tmp_path / "dt.json"
    code, out, _ = run(capsys, "train", sample_csv, "--model", "dt", "--out", model,
                       "--confusion-out", tmp_path / "cm.csv")
    assert code == 0
    trained = json_lines(out)[0]
    assert trained["n_classes"] == 16 and 0 <= trained["accuracy"] <= 1
    assert (tmp_path / "cm.csv").read_text().startswith("true\\pred,")
    code, out, _ = run(capsys, "eval", model, sample_csv)
    evaluated = json_lines(out)[0]
    assert code == 0
    for key in ("accuracy", "f1_macro", "precision_macro", "recall_macro", "per_class"):
        assert evaluated[key] == trained[key]


def test_train_seed_env_fallback(tmp_path, capsys, sample_csv, monkeypatch):
    monkeypatch.setenv("MALDICOM_SEED", "7")
    _, out, _ = run(capsys, "train", sample_csv, "--model", "gnb")
    assert json_lines(out)[0]["split"]["seed"] == 7
    _, out, _ = run(capsys, "train", sample_csv, "--model", "gnb", "--seed", "3")
    assert json_lines(out)[0]["split"]["seed"] == 3


def test_train_schema_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    code, _, err = run(capsys, "train", bad)
    assert code == 1 and "SchemaMismatch" in err and "Category" in err


def test_explain_exact_top8(tmp_path, capsys, sample_csv):
    model = tmp_path / "rf.json"
    run(capsys, "train", sample_csv, "--model", "rf", "--trees", "10", "--out", model)
    code, out, _ = run(capsys, "explain", model, sample_csv, "--row", "0", "--exact-features", "8", "--json")
    assert code == 0
    doc = json_lines(out)[0]
    assert doc["mode"] == "exact" and doc["efficiency_gap"] <= 1e-9
    assert len(doc["top"]) == 8

    csv_out = tmp_path / "phi.csv"
    code, text, _ = run(capsys, "explain", model, sample_csv, "--row", "1", "--exact-features", "4",
                        "--out", csv_out)
    rows = csv_out.read_text().splitlines()
    assert rows[0] == "feature,phi" and len(rows) == 56
    assert sum(1 for r in rows[1:] if float(r.split(",")[1]) != 0.0) <= 4
    assert "efficiency gap" in text


def test_explain_sampled_and_errors(tmp_path, capsys, sample_csv):
    model = tmp_path / "gnb.json"
    run(capsys, "train", sample_csv, "--model", "gnb", "--out", model)
    code, out, err = run(capsys, "explain", model, sample_csv, "--row", "5", "--permutations", "64")
    assert code == 0 and out.startswith("feature,phi") and "efficiency gap" in err
    code, _, _ = run(capsys, "explain", model, sample_csv, "--row", "999999")
    assert code == 1
    code, _, _ = run(capsys, "explain", model, sample_csv, "--exact-features", "40")
    assert code == 1
    narrow = tmp_path / "narrow.csv"
    lines = sample_csv.read_text().splitlines()
    narrow.write_text("\n".join(",".join(line.split(",")[:5]) for line in lines[:50]) + "\n")
    code, _, err = run(capsys, "eval", model, narrow)
    assert code == 1 and "missing" in err


def test_module_entry_point(tmp_path):
    (tmp_path / "c.dcm").write_bytes(corpus.make_dicom(seed=0))
    proc = subprocess.run([sys.executable, "-m", "maldicom", "scan", str(tmp_path), "--json"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["verdict"] == "Clean"
