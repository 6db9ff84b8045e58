import json
import math

import numpy as np
import pytest

from interbank_stress import FitTargets, compute_margins
from interbank_stress.cli import main
from interbank_stress.io import IngestError, ingest, read_edges, read_manifest, read_rows, sha256, write_edges
from interbank_stress.synth import SyntheticSpec, generate, synth


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def two_bank_files(tmp_path):
    edges = write(tmp_path / "edges.csv", "lender,borrower,amount\n2,1,5\n")
    banks = write(tmp_path / "banks.csv", "bank,equity\n1,50\n2,10\n")
    return edges, banks


def test_ingest_sums_duplicates(tmp_path):
    edges = write(tmp_path / "e.csv", "lender,borrower,amount\na,b,2\na,b,3.5\nb,a,1\n")
    banks = write(tmp_path / "b.csv", "bank,equity\na,10\nb,10\n")
    snap = ingest(edges, banks)
    assert snap.net.dense()[0, 1] == 5.5
    np.testing.assert_allclose(snap.sheets.identity_residual(), 0.0, atol=1e-12)


def test_ingest_imputes_missing_equity(tmp_path):
    edges = write(tmp_path / "e.csv", "lender,borrower,amount\na,b,6\nb,a,8\nc,a,4\n")
    banks = write(tmp_path / "b.csv", "bank,equity\na,3\n")
    reg = write(tmp_path / "r.json", json.dumps({"intercept": 0.0, "slope": 1.0}))
    snap = ingest(edges, banks, reg)
    assert snap.imputed == ("b", "c")
    np.testing.assert_allclose(snap.equity, [3.0, 7.0, 2.0])
    with pytest.raises(IngestError, match="no equity"):
        ingest(edges, banks)


def test_ingest_errors_name_the_row(tmp_path):
    bad = write(tmp_path / "e.csv", "lender,borrower,amount\na,b,1\nc,c,2\n")
    with pytest.raises(IngestError, match=r"e\.csv:3: self-loop"):
        read_edges(bad)
    bad = write(tmp_path / "f.csv", "lender,borrower,amount\na,b,-1\n")
    with pytest.raises(IngestError, match=r":2: amount"):
        read_edges(bad)
    bad = write(tmp_path / "g.csv", "from,to,amount\na,b,1\n")
    with pytest.raises(IngestError, match="header"):
        read_edges(bad)


def test_edge_round_trip(tmp_path):
    snap = generate(SyntheticSpec(n=30, density=0.2, seed=4))
    write_edges(snap.net, tmp_path / "e.csv")
    back = read_edges(tmp_path / "e.csv")
    assert back == list(snap.net.edges())


def test_synth_is_byte_identical(tmp_path):
    spec = SyntheticSpec(n=40, seed=12)
    a = synth(spec, tmp_path / "a")
    b = synth(spec, tmp_path / "b")
    assert [sha256(p) for p in a] == [sha256(p) for p in b]


def test_synth_density_and_feasibility():
    spec = SyntheticSpec(n=200, density=0.05, strength_sigma=1.5, seed=1)
    snap = generate(spec)
    p = snap.link_prob
    expected = p.sum()
    sd = math.sqrt((p * (1 - p)).sum())
    assert expected == pytest.approx(0.05 * 200 * 199, rel=1e-9)
    assert abs(snap.net.num_links - expected) <= 4 * sd
    t = FitTargets.from_network(snap.net)
    assert not t.feasibility_problems()
    assert np.all(snap.equity > 0)
    m = compute_margins(snap.net)
    assert m.s_out.sum() == pytest.approx(m.s_in.sum())


def test_cli_stress_default_scenario(tmp_path, two_bank_files):
    edges, banks = two_bank_files
    out = tmp_path / "out"
    code = main(["stress", "--edges", str(edges), "--banks", str(banks), "--default", "1", "--out-dir", str(out)])
    assert code == 0
    final = [r for r in read_rows(out / "h_trajectory.csv") if r["round"] == "final"]
    assert float(final[0]["H"]) == pytest.approx(1 / 12, abs=1e-12)
    assert read_manifest(out / "stress.manifest.json")["command"] == "stress"


def test_cli_alpha_sweep_is_monotone(tmp_path):
    out = tmp_path / "syn"
    assert main(["synth", "--n", "30", "--density", "0.2", "--seed", "3", "--out-dir", str(out)]) == 0
    code = main([
        "stress", "--edges", str(out / "edges.csv"), "--banks", str(out / "banks.csv"),
        "--valuation", "nldr", "--alpha", "0,1,2,5,10", "--lam", "0.05", "--out-dir", str(tmp_path / "s"),
    ])
    assert code == 0
    rows = [r for r in read_rows(tmp_path / "s" / "h_trajectory.csv") if r["round"] == "final"]
    hs = [float(r["H"]) for r in rows]
    assert [r["valuation"] for r in rows] == [f"nldr(alpha={a})" for a in (0, 1, 2, 5, 10)]
    assert all(b <= a + 1e-12 for a, b in zip(hs, hs[1:]))


def test_cli_exit_codes(tmp_path, two_bank_files):
    edges, banks = two_bank_files
    assert main(["stress", "--edges", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path)]) == 3
    loop = write(tmp_path / "loop.csv", "lender,borrower,amount\n1,1,5\n")
    assert main(["relevance", "--edges", str(loop), "--banks", str(banks), "--out-dir", str(tmp_path)]) == 4
    with pytest.raises(SystemExit) as exc:
        main(["stress", "--out-dir", str(tmp_path)])
    assert exc.value.code == 2
    code = main([
        "stress", "--edges", str(edges), "--banks", str(banks), "--default", "1",
        "--max-rounds", "0", "--out-dir", str(tmp_path / "x"),
    ])
    assert code == 4  # max_rounds must be positive


def test_cli_nonconvergence_exit(tmp_path):
    syn = tmp_path / "syn"
    main(["synth", "--n", "30", "--density", "0.3", "--seed", "1", "--out-dir", str(syn)])
    code = main([
        "stress", "--edges", str(syn / "edges.csv"), "--banks", str(syn / "banks.csv"),
        "--lam", "0.05", "--max-rounds", "1", "--out-dir", str(tmp_path / "o"),
    ])
    assert code == 5


def test_cli_config_file(tmp_path, two_bank_files):
    edges, banks = two_bank_files
    cfg = write(tmp_path / "cfg.json", json.dumps({"edges": str(edges), "banks": str(banks), "default": "1", "valuation": "furfine"}))
    assert main(["stress", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    doc = read_manifest(tmp_path / "o" / "stress.manifest.json")
    assert doc["config"]["valuation"] == "furfine"
    rows = read_rows(tmp_path / "o" / "h_trajectory.csv")
    assert rows[0]["valuation"] == "furfine(R=0.4)"


def test_cli_pipeline_and_replay(tmp_path, monkeypatch):
    syn = tmp_path / "syn"
    assert main(["synth", "--n", "25", "--density", "0.2", "--seed", "5", "--out-dir", str(syn)]) == 0
    e, b = str(syn / "edges.csv"), str(syn / "banks.csv")
    assert main(["fit-null", "--edges", e, "--banks", b, "--out-dir", str(tmp_path / "fit")]) == 0
    params = str(tmp_path / "fit" / "params.json")
    assert main(["sample", "--params", params, "--count", "3", "--seed", "1", "--out-dir", str(tmp_path / "smp")]) == 0
    assert sorted(p.name for p in (tmp_path / "smp").glob("sample_*.csv")) == [f"sample_0000{k}.csv" for k in range(3)]
    monkeypatch.setenv("INTERBANK_STRESS_OUTPUT_DIR", str(tmp_path / "ens"))
    assert main([
        "ensemble", "--edges", e, "--banks", b, "--params", params, "--scenario", "default",
        "--valuation", "furfine", "--recovery", "0,0.4", "--samples", "6", "--seed", "2",
    ]) == 0
    stats = read_rows(tmp_path / "ens" / "stats.csv")
    assert len(stats) == 2 * 2 * 25 and stats[0]["M"] == "6" and stats[0]["seed"] == "2"
    assert main([
        "report", "--stats", str(tmp_path / "ens" / "stats.csv"),
        "--deciles", str(tmp_path / "ens" / "deciles.csv"), "--out-dir", str(tmp_path / "rep"),
    ]) == 0
    assert (tmp_path / "rep" / "deviation_summary.csv").exists()
    manifest = tmp_path / "ens" / "ensemble.manifest.json"
    assert main(["replay", str(manifest), "--out-dir", str(tmp_path / "again"), "--workers", "2"]) == 0
    assert sha256(tmp_path / "again" / "stats.csv") == sha256(tmp_path / "ens" / "stats.csv")
    # a tampered input is detected
    with open(e, "a", encoding="utf-8") as f:
        f.write("B00,B01,1.0\n")
    assert main(["replay", str(manifest), "--out-dir", str(tmp_path / "again2")]) == 1


def test_ingest_without_balance_sheets(tmp_path):
    edges = write(tmp_path / "e.csv", "lender,borrower,amount\na,b,6\nb,a,8\nc,a,4\n")
    reg = write(tmp_path / "r.json", json.dumps({"intercept": 0.0, "slope": 1.0}))
    snap = ingest(edges, None, reg)
    assert snap.imputed == ("a", "b", "c")
    np.testing.assert_allclose(snap.equity, [9.0, 7.0, 2.0])
