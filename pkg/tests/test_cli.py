"""Command-line interface tests: exit codes, files, and figures."""

import csv
import json
import shutil

import numpy as np
import pytest

from texmatch.cli import main, roc_table
from texmatch.errors import ValidationError

SYNTH_TOML = "width = 320\nheight = 320\n"


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "synth.toml"
    cfg.write_text(SYNTH_TOML)
    out = root / "data"
    rc = main(["synth", "--out-dir", str(out), "--count", "3",
               "--seed", "40", "--config", str(cfg)])
    assert rc == 0
    return out


def test_synth_writes_expected_files(synth_dir):
    for k in range(3):
        assert (synth_dir / f"ref_{k:04d}.pgm").is_file()
        assert (synth_dir / f"ref_{k:04d}.ftt").is_file()
        assert (synth_dir / f"lat_{k:04d}.ftt").is_file()
        assert (synth_dir / f"lat_{k:04d}.truth.csv").is_file()
    manifest = (synth_dir / "gallery_manifest.csv").read_text().splitlines()
    assert manifest[0] == "subject_id,variant,template_path"
    assert len(manifest) == 4
    mates = (synth_dir / "mates.csv").read_text().splitlines()
    assert mates[0] == "query_id,mate_id"
    assert mates[1] == "lat_0000,ref_0000"


def test_extract_reproduces_synth_template(synth_dir, tmp_path, capsys):
    out = tmp_path / "re.ftt"
    rc = main(["extract", "--image", str(synth_dir / "ref_0000.pgm"),
               "--kind", "reference", "--out", str(out),
               "--field-csv", str(tmp_path / "field.csv")])
    assert rc == 0
    assert "minutiae" in capsys.readouterr().out
    assert out.read_bytes() == (synth_dir / "ref_0000.ftt").read_bytes()
    header = (tmp_path / "field.csv").read_text().splitlines()[0]
    assert header == "row,col,angle,coherence,roi"

    again = tmp_path / "re2.ftt"
    assert main(["extract", "--image", str(synth_dir / "ref_0000.pgm"),
                 "--kind", "reference", "--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()


def test_match_json_report(synth_dir, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        rc = main(["match", "--latent", str(synth_dir / "lat_0000.ftt"),
                   "--ref", str(synth_dir / "ref_0000.ftt"),
                   "--out", str(path)])
        assert rc == 0
    pa, pb = json.loads(a.read_text()), json.loads(b.read_text())
    pa.pop("timings")
    pb.pop("timings")
    assert pa == pb
    assert pa["score"] > 0.0
    assert pa["n_final"] == len(pa["correspondences"])

    other = tmp_path / "nonmate.json"
    assert main(["match", "--latent", str(synth_dir / "lat_0000.ftt"),
                 "--ref", str(synth_dir / "ref_0001.ftt"),
                 "--out", str(other)]) == 0
    assert pa["score"] > json.loads(other.read_text())["score"]


def test_match_plain_output(synth_dir, capsys):
    rc = main(["match", "--latent", str(synth_dir / "lat_0000.ftt"),
               "--ref", str(synth_dir / "ref_0000.ftt")])
    assert rc == 0
    assert "score" in capsys.readouterr().out


@pytest.fixture(scope="module")
def search_results(synth_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("search")
    queries = root / "queries"
    queries.mkdir()
    for path in synth_dir.glob("lat_*.ftt"):
        shutil.copy(path, queries / path.name)
    out = root / "results.json"
    rc = main(["search", "--query-dir", str(queries),
               "--gallery", str(synth_dir / "gallery_manifest.csv"),
               "--out", str(out)])
    assert rc == 0
    return out


def test_search_output_shape(search_results):
    data = json.loads(search_results.read_text())
    assert data["gallery_size"] == 3
    assert [q["query_id"] for q in data["queries"]] == \
        ["lat_0000", "lat_0001", "lat_0002"]
    for q in data["queries"]:
        scores = [c["score"] for c in q["candidates"]]
        assert scores == sorted(scores, reverse=True)
        assert q["latency"]["count"] == 3


def test_search_identifies_mates(search_results):
    data = json.loads(search_results.read_text())
    for q in data["queries"]:
        mate = q["query_id"].replace("lat_", "ref_")
        assert q["candidates"][0]["subject_id"] == mate


def test_cmc_command_writes_curve_and_figure(search_results, synth_dir,
                                             tmp_path, capsys):
    out = tmp_path / "cmc.csv"
    rc = main(["cmc", "--results", str(search_results),
               "--mates", str(synth_dir / "mates.csv"), "--out", str(out)])
    assert rc == 0
    assert "rank-1 rate 1.0000" in capsys.readouterr().out
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["rank", "rate"]
    assert rows[1] == ["1", "1.000000"]
    assert (tmp_path / "cmc.png").is_file()

    quiet = tmp_path / "quiet.csv"
    assert main(["cmc", "--results", str(search_results),
                 "--mates", str(synth_dir / "mates.csv"),
                 "--out", str(quiet), "--no-fig"]) == 0
    assert not (tmp_path / "quiet.png").exists()


def test_roc_command(synth_dir, tmp_path, capsys):
    pairs = synth_dir / "pairs.csv"
    with open(pairs, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["latent", "reference", "truth"])
        for k in range(3):
            writer.writerow([f"lat_{k:04d}.ftt", f"ref_{k:04d}.ftt",
                             f"lat_{k:04d}.truth.csv"])
    out = tmp_path / "roc.csv"
    rc = main(["roc", "--pairs", str(pairs), "--out", str(out)])
    assert rc == 0
    assert "mean separation" in capsys.readouterr().out
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["threshold", "tpr", "fpr"]
    tprs = [float(r[1]) for r in rows[1:]]
    fprs = [float(r[2]) for r in rows[1:]]
    assert tprs[0] == 1.0 and fprs[0] == 1.0
    assert all(a >= b for a, b in zip(tprs, tprs[1:]))
    assert all(a >= b for a, b in zip(fprs, fprs[1:]))
    assert (tmp_path / "roc.png").is_file()


def test_roc_table_validation():
    with pytest.raises(ValidationError):
        roc_table(np.array([]), np.array([0.1]))


def test_bench_command(tmp_path):
    out = tmp_path / "bench.json"
    rc = main(["bench", "--comparisons", "20", "--latent-points", "20",
               "--ref-points", "50", "--desc-len", "96", "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["comparisons"] == 20
    assert payload["latent_minutiae"] == 40    # duals included
    assert payload["reference_minutiae"] == 50
    assert payload["descriptor_len"] == 96
    assert payload["mean_ms"] > 0.0
    assert payload["median_ms"] <= payload["p95_ms"]
    assert set(payload["stage_means_ms"]) == \
        {"sim_ms", "norm_ms", "topn_ms", "graph_ms"}
    assert (tmp_path / "bench.png").is_file()


def test_params_toml(synth_dir, tmp_path):
    good = tmp_path / "good.toml"
    good.write_text("[matcher]\ntop_n = 50\n")
    assert main(["match", "--latent", str(synth_dir / "lat_0000.ftt"),
                 "--ref", str(synth_dir / "ref_0000.ftt"),
                 "--params", str(good), "--out",
                 str(tmp_path / "m.json")]) == 0

    bad = tmp_path / "bad.toml"
    bad.write_text("[matcher]\nnot_a_knob = 1\n")
    assert main(["match", "--latent", str(synth_dir / "lat_0000.ftt"),
                 "--ref", str(synth_dir / "ref_0000.ftt"),
                 "--params", str(bad)]) == 4


def test_exit_codes(synth_dir, tmp_path, capsys):
    # missing input file -> I/O error
    assert main(["match", "--latent", str(tmp_path / "absent.ftt"),
                 "--ref", str(synth_dir / "ref_0000.ftt")]) == 3
    # corrupt template -> data error
    garbage = tmp_path / "garbage.ftt"
    garbage.write_bytes(b"not a template")
    assert main(["match", "--latent", str(garbage),
                 "--ref", str(synth_dir / "ref_0000.ftt")]) == 4
    # bench with half a template pair -> data error
    assert main(["bench", "--comparisons", "1",
                 "--latent", str(synth_dir / "lat_0000.ftt")]) == 4
    capsys.readouterr()
    # argparse usage failure -> SystemExit(2)
    with pytest.raises(SystemExit) as exc:
        main(["match"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
