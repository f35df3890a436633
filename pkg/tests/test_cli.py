import csv
import io
import json
import struct
import subprocess
import sys
import tracemalloc
from pathlib import Path

import numpy as np
import pytest

from photostats import cli, oracle, pipeline, qstates
from photostats.qstates import StateConfig
from photostats.streamfile import StreamReader, write_stream

GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def simulate(capsys, tmp_path, name, cfg, samples, seed=1):
    path = tmp_path / name
    code, _, err = run(capsys, "simulate", json.dumps(cfg), "--samples", samples,
                       "--seed", seed, "--out", path)
    assert code == 0, err
    return path


def cumulants(capsys, *paths, batches=100):
    code, out, err = run(capsys, "cumulants", *paths, "--batches", batches)
    assert code == 0, err
    return json.loads(out)


# -- simulate --------------------------------------------------------------------

def test_simulate_is_byte_identical(capsys, tmp_path):
    cfg = {"kind": "coherent", "alpha2": 0.5}
    a = simulate(capsys, tmp_path, "a.phqs", cfg, 10**6, seed=42)
    b = simulate(capsys, tmp_path, "b.phqs", cfg, 10**6, seed=42)
    assert a.read_bytes() == b.read_bytes()
    with StreamReader(a) as r:
        assert r.count == 10**6
        assert r.config == StateConfig.coherent(0.5, seed=42)


def test_stream_header_layout(capsys, tmp_path):
    path = simulate(capsys, tmp_path, "s.phqs", {"kind": "thermal", "nbar": 1.0}, 10)
    raw = path.read_bytes()
    magic, version, count, meta_len = struct.unpack_from("<4sIQI", raw)
    assert (magic, version, count) == (b"PHQS", 1, 10)
    assert json.loads(raw[20:20 + meta_len])["kind"] == "thermal"
    body = np.frombuffer(raw[20 + meta_len:], dtype="<f8")
    assert np.array_equal(body, qstates.sample(StateConfig.thermal(1.0, seed=1), 10))


def test_simulate_zero_samples_is_validation_error(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", '{"kind": "coherent", "alpha2": 1}',
                       "--samples", 0, "--out", tmp_path / "x")
    assert code == cli.EXIT_VALIDATION and "samples" in err


def test_simulate_bad_config(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", '{"kind": "laser"}', "--samples", 10,
                     "--out", tmp_path / "x")
    assert code == cli.EXIT_VALIDATION
    code, _, _ = run(capsys, "simulate", "{not json", "--samples", 10, "--out", tmp_path / "x")
    assert code == cli.EXIT_VALIDATION


def test_simulate_unwritable_output(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", '{"kind": "coherent", "alpha2": 1}', "--samples", 10,
                     "--out", tmp_path / "missing" / "x")
    assert code == cli.EXIT_IO


def test_simulate_reads_config_file(capsys, tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text('{"kind": "fock", "n": 1}')
    path = tmp_path / "f.phqs"
    assert run(capsys, "simulate", cfg_file, "--samples", 10**5, "--out", path)[0] == 0
    doc = cumulants(capsys, path)
    assert abs(doc["c"][1] - 1.5) < 5 * doc["se"][1]


# -- cumulants --------------------------------------------------------------------

@pytest.mark.slow
def test_vacuum_stream_cumulants(capsys, tmp_path):
    path = simulate(capsys, tmp_path, "vac.phqs", {"kind": "coherent", "alpha2": 0.0}, 10**7)
    doc = cumulants(capsys, path)
    assert doc["schema_version"] == 1 and doc["count"] == 10**7
    assert abs(doc["c"][1] - 0.5) < 5 * doc["se"][1]


def test_coherent_stream_c4(capsys, tmp_path):
    path = simulate(capsys, tmp_path, "coh.phqs", {"kind": "coherent", "alpha2": 1.0}, 2 * 10**6)
    doc = cumulants(capsys, path)
    assert abs(doc["c"][3] + 1.5) < 5 * doc["se"][3]


def test_split_files_match_whole(capsys, tmp_path):
    cfg = StateConfig.coherent(0.8, noise_photons=0.5, seed=9)
    n = 200_003
    whole = tmp_path / "whole.phqs"
    write_stream(whole, qstates.iter_chunks(cfg, n), n, cfg)
    halves = []
    for i, (lo, hi) in enumerate([(0, 90_001), (90_001, n)]):
        p = tmp_path / f"half{i}.phqs"
        write_stream(p, [qstates.sample_range(cfg, lo, hi, n)], hi - lo, cfg)
        halves.append(p)
    a = cumulants(capsys, whole)
    b = cumulants(capsys, *halves)
    np.testing.assert_allclose(b["c"], a["c"], rtol=1e-10, atol=1e-12)


def test_cumulants_json_file_output(capsys, tmp_path):
    path = simulate(capsys, tmp_path, "s.phqs", {"kind": "thermal", "nbar": 0.3}, 10**4)
    out = tmp_path / "c.json"
    assert run(capsys, "cumulants", path, "--json", out)[0] == 0
    assert json.loads(out.read_text())["count"] == 10**4


def _corrupt(path, offset, data):
    raw = bytearray(path.read_bytes())
    raw[offset:offset + len(data)] = data
    path.write_bytes(bytes(raw))


@pytest.mark.parametrize("damage", ["magic", "version", "truncate", "header"])
def test_corrupt_streams_exit_io(capsys, tmp_path, damage):
    path = simulate(capsys, tmp_path, "s.phqs", {"kind": "coherent", "alpha2": 1.0}, 1000)
    if damage == "magic":
        _corrupt(path, 0, b"XXXX")
    elif damage == "version":
        _corrupt(path, 4, struct.pack("<I", 99))
    elif damage == "truncate":
        path.write_bytes(path.read_bytes()[:-12])
    else:
        path.write_bytes(path.read_bytes()[:10])
    code, _, err = run(capsys, "cumulants", path)
    assert code == cli.EXIT_IO, err


def test_missing_stream_exit_io(capsys, tmp_path):
    assert run(capsys, "cumulants", tmp_path / "nope.phqs")[0] == cli.EXIT_IO


def test_short_stream_is_validation_error(capsys, tmp_path):
    path = simulate(capsys, tmp_path, "s.phqs", {"kind": "coherent", "alpha2": 1.0}, 50)
    assert run(capsys, "cumulants", path)[0] == cli.EXIT_VALIDATION


def test_cumulants_memory_independent_of_length(capsys, tmp_path):
    # peak traced allocation is set by the read chunk, not the file length
    cfg = StateConfig.coherent(0.5, seed=3)
    peaks = []
    for n in (2 * 10**6, 2 * 10**7):
        path = tmp_path / f"m{n}.phqs"
        write_stream(path, qstates.iter_chunks(cfg, n), n, cfg)
        tracemalloc.start()
        cli.stream_cumulants([path])
        peaks.append(tracemalloc.get_traced_memory()[1])
        tracemalloc.stop()
        path.unlink()
    assert peaks[1] < 1.25 * peaks[0] + 2**20
    assert peaks[1] < 3 * 8 * (1 << 20)


# -- reconstruct ------------------------------------------------------------------

def _cumulant_file(capsys, tmp_path, name, cfg, samples, seed):
    stream = simulate(capsys, tmp_path, name + ".phqs", cfg, samples, seed)
    out = tmp_path / (name + ".json")
    assert run(capsys, "cumulants", stream, "--json", out)[0] == 0
    stream.unlink()
    return out


def test_reconstruct_noise_subtracted_coherent(capsys, tmp_path):
    sig = _cumulant_file(capsys, tmp_path, "sig",
                         {"kind": "coherent", "alpha2": 0.5, "noise_photons": 1.0}, 2 * 10**6, 5)
    bg = _cumulant_file(capsys, tmp_path, "bg",
                        {"kind": "background", "noise_photons": 1.0}, 2 * 10**6, 6)
    code, out, err = run(capsys, "reconstruct", "--signal", sig, "--noise", bg)
    assert code == 0, err
    doc = json.loads(out)
    pm = doc["photon_moments"]
    for key, se in zip(("n", "dn2", "dn3"), pm["se"]):
        assert abs(pm[key] - 0.5) < 5 * se
    assert doc["noise_subtracted"] is True
    assert doc["classicality"]["verdict"] == "ClassicalCompatible"


def test_reconstruct_vacuum_without_noise(capsys, tmp_path):
    sig = _cumulant_file(capsys, tmp_path, "vac", {"kind": "coherent", "alpha2": 0.0}, 10**6, 7)
    out = tmp_path / "report.json"
    assert run(capsys, "reconstruct", "--signal", sig, "--out", out)[0] == 0
    pm = json.loads(out.read_text())["photon_moments"]
    for key, se in zip(("n", "dn2", "dn3"), pm["se"]):
        assert abs(pm[key]) < 5 * se


def test_reconstruct_self_subtraction(capsys, tmp_path):
    sig = _cumulant_file(capsys, tmp_path, "s", {"kind": "thermal", "nbar": 0.5}, 10**5, 8)
    code, out, _ = run(capsys, "reconstruct", "--signal", sig, "--noise", sig)
    assert code == 0
    doc = json.loads(out)
    single = json.loads(sig.read_text())
    assert doc["cumulants"]["c"] == [0.0] * 6
    np.testing.assert_allclose(doc["cumulants"]["se"], np.sqrt(2) * np.array(single["se"]))


def test_reconstruct_without_errors_warns(capsys, tmp_path):
    path = tmp_path / "bare.json"
    path.write_text(json.dumps({"schema_version": 1, "count": 100,
                                "c": [0, 1.5, 0, -1.5, 0, 10], "se": None}))
    code, out, err = run(capsys, "reconstruct", "--signal", path)
    assert code == 0
    doc = json.loads(out)
    assert doc["photon_moments"]["n"] == pytest.approx(1.0)
    assert doc["classicality"]["verdict"] == "Indeterminate"
    assert "warning" in err and doc["warnings"]


def test_reconstruct_schema_mismatch(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"schema_version": 7, "count": 1, "c": [0] * 6}))
    assert run(capsys, "reconstruct", "--signal", path)[0] == cli.EXIT_VALIDATION
    path.write_text("[1, 2")
    assert run(capsys, "reconstruct", "--signal", path)[0] == cli.EXIT_VALIDATION


# -- sweep ------------------------------------------------------------------------

def _sweep(capsys, tmp_path, *args):
    out = tmp_path / "sweep.csv"
    code, _, err = run(capsys, "sweep", *args, "--out", out)
    assert code == 0, err
    text = out.read_text()
    rows = list(csv.DictReader(io.StringIO(text.split("\n", 1)[1])))
    return text, [{k: (v if k == "verdict" else float(v)) for k, v in r.items()} for r in rows]


def test_sweep_header_matches_golden(capsys, tmp_path):
    text, rows = _sweep(capsys, tmp_path, "--n-from", 0.5, "--points", 1,
                        "--samples-per-point", 10**4)
    golden = (GOLDEN / "sweep_header_v1.csv").read_text()
    assert text.startswith(golden)
    assert len(rows) == 1


def test_sweep_deterministic_and_threads_invariant(capsys, tmp_path):
    args = ("--n-from", 0.1, "--n-to", 1, "--points", 3, "--samples-per-point", 10**5,
            "--seed", 17)
    a, _ = _sweep(capsys, tmp_path, *args, "--threads", 1)
    b, _ = _sweep(capsys, tmp_path, *args, "--threads", 3)
    assert a == b


def test_coherent_sweep_on_poisson_line(capsys, tmp_path):
    _, rows = _sweep(capsys, tmp_path, "--state", "coherent", "--n-from", 0.1, "--n-to", 1,
                     "--points", 4, "--samples-per-point", 2 * 10**6)
    assert [r["n_target"] for r in rows] == pytest.approx(np.geomspace(0.1, 1, 4))
    for r in rows:
        for key, se in (("n_est", "se_n"), ("dn2_est", "se_dn2"), ("dn3_est", "se_dn3")):
            assert abs(r[key] - r["n_target"]) < 5 * r[se]


def test_square_modulation_sweep(capsys, tmp_path):
    _, rows = _sweep(capsys, tmp_path, "--state", "modulated", "--scheme", "square",
                     "--n-from", 0.03, "--n-to", 1, "--points", 3,
                     "--samples-per-point", 2 * 10**6)
    for r in rows:
        n = r["n_target"]
        assert abs(r["dn2_est"] - (n + n * n)) < 5 * r["se_dn2"]
    assert rows[0]["fano"] < rows[-1]["fano"]


def test_sweep_tiny_signal_does_not_crash(capsys, tmp_path):
    _, rows = _sweep(capsys, tmp_path, "--n-from", 1e-3, "--points", 1,
                     "--samples-per-point", 10**6)
    assert len(rows) == 1
    assert rows[0]["se_n"] > rows[0]["n_target"]


@pytest.mark.parametrize("args", [
    ("--n-from", 0),
    ("--n-from", 1, "--n-to", 0.5),
    ("--points", 0),
    ("--state", "modulated"),
    ("--noise-photons", -1),
])
def test_sweep_validation(capsys, tmp_path, args):
    code, _, _ = run(capsys, "sweep", *args, "--samples-per-point", 10**4,
                     "--out", tmp_path / "s.csv")
    assert code == cli.EXIT_VALIDATION


def test_sweep_budget_validation(capsys, tmp_path):
    code, _, _ = run(capsys, "sweep", "--samples-per-point", 10, "--out", tmp_path / "s.csv")
    assert code == cli.EXIT_VALIDATION


def test_threads_default_from_environment(monkeypatch):
    monkeypatch.setenv(pipeline.THREADS_ENV, "3")
    assert pipeline.default_threads() == 3
    monkeypatch.setenv(pipeline.THREADS_ENV, "lots")
    assert pipeline.default_threads() == 1


def test_sub_seeds_distinct():
    seeds = {pipeline.sub_seed(5, k, role) for k in range(50) for role in ("signal", "noise")}
    assert len(seeds) == 100


# -- oracle -------------------------------------------------------------------------

def test_oracle_eq3(capsys):
    code, out, _ = run(capsys, "oracle", "--check", "eq3", "--k", 2,
                       "--state", '{"kind": "coherent", "alpha2": 1.0}')
    assert code == 0
    row = json.loads(out)["results"][0]
    assert row["closed_form"] == pytest.approx(5.25, rel=1e-12)
    assert row["brute_force"] == pytest.approx(5.25, rel=1e-12)


def test_oracle_roundtrip(capsys):
    code, out, _ = run(capsys, "oracle", "--check", "roundtrip",
                       "--state", '{"kind": "thermal", "nbar": 2.0}')
    assert code == 0
    assert json.loads(out)["reconstructed"] == pytest.approx([2, 6, 30], abs=1e-9)


def test_oracle_displace(capsys):
    code, out, _ = run(capsys, "oracle", "--check", "displace", "--r", 1,
                       "--state", '{"kind": "coherent", "alpha2": 0.0}')
    assert code == 0
    doc = json.loads(out)
    assert doc["direct"] == pytest.approx([1, 1], abs=1e-10)
    assert doc["transformed"] == pytest.approx([1, 1], abs=1e-10)


def test_oracle_cgf(capsys):
    code, out, _ = run(capsys, "oracle", "--check", "cgf",
                       "--state", '{"kind": "coherent", "alpha2": 1.0}')
    assert code == 0
    assert [r["closed_form"] for r in json.loads(out)["results"]] == [0, 1.5, 0, -1.5, 0, 10]


def test_oracle_failure_exit_code(capsys, monkeypatch):
    monkeypatch.setattr(oracle, "DISPLACE_TOL", -1.0)
    code, out, err = run(capsys, "oracle", "--check", "displace")
    assert code == cli.EXIT_ORACLE
    assert json.loads(out)["ok"] is False and "failed" in err


def test_oracle_truncation_is_oracle_failure(capsys):
    code, _, _ = run(capsys, "oracle", "--check", "displace", "--r", 4, "--n-trunc", 16)
    assert code in (cli.EXIT_ORACLE, cli.EXIT_VALIDATION)


# -- curves / entry points ----------------------------------------------------------------

def test_curves(capsys):
    code, out, _ = run(capsys, "curves", "--grid", "0,1,0.01")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "n,dn2_coherent,dn2_squeezed"
    assert lines[2] == "1.0,1.0,4.0"
    assert run(capsys, "curves", "--grid", "-1")[0] == cli.EXIT_VALIDATION


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "photostats", "curves", "--grid", "1"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert res.stdout.splitlines()[1] == "1.0,1.0,4.0"
