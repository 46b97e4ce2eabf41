import csv
import hashlib
import json
import struct
import zlib

import numpy as np
import pytest

from dsagc import cli, report, tsne
from dsagc.errors import ConfigError, ProtocolError


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def png_text_chunks(path) -> dict:
    raw = open(path, "rb").read()
    assert raw[:8] == b"\x89PNG\r\n\x1a\n"
    out, pos = {}, 8
    while pos < len(raw):
        (n,) = struct.unpack(">I", raw[pos:pos + 4])
        kind, body = raw[pos + 4:pos + 8], raw[pos + 8:pos + 8 + n]
        if kind == b"tEXt":
            k, v = body.split(b"\0", 1)
            out[k.decode("latin-1")] = v.decode("latin-1")
        elif kind == b"zTXt":
            k, rest = body.split(b"\0", 1)
            out[k.decode("latin-1")] = zlib.decompress(rest[1:]).decode("latin-1")
        elif kind == b"iTXt":
            k, rest = body.split(b"\0", 1)
            out[k.decode()] = rest.split(b"\0", 3)[-1].decode()
        pos += 12 + n
    return out


# ------------------------------------------------------------------ t-SNE


def test_tsne_deterministic_and_separates_clusters(rng):
    X = np.vstack([rng.standard_normal((20, 5)), rng.standard_normal((20, 5)) + 12.0])
    a = tsne.tsne(X, perplexity=8, n_iter=500, seed=3)
    np.testing.assert_array_equal(a, tsne.tsne(X, perplexity=8, n_iter=500, seed=3))
    c0, c1 = a[:20].mean(axis=0), a[20:].mean(axis=0)
    spread = max(np.linalg.norm(a[:20] - c0, axis=1).max(), np.linalg.norm(a[20:] - c1, axis=1).max())
    assert np.linalg.norm(c0 - c1) > spread


@pytest.mark.parametrize("n, perplexity", [(30, 5.0), (60, 30.0), (150, 30.0)])
def test_tsne_duplicates_coincide(rng, n, perplexity):
    X = rng.standard_normal((n, 4))
    X[7] = X[3]
    X[n - 1] = X[3]
    X[10] = X[11]
    Y = tsne.tsne(X, perplexity=perplexity, seed=0)
    assert np.linalg.norm(Y[7] - Y[3]) < 1e-3
    assert np.linalg.norm(Y[n - 1] - Y[3]) < 1e-3
    assert np.linalg.norm(Y[10] - Y[11]) < 1e-3
    assert np.linalg.norm(Y[3] - Y[11]) > 1e-3


def test_tsne_reduces_kl(rng):
    X = rng.standard_normal((25, 6))
    Y = tsne.tsne(X, perplexity=5, seed=1)
    assert tsne.kl_divergence(X, Y, 5) < tsne.kl_divergence(X, rng.standard_normal((25, 2)), 5)


def test_joint_probabilities_sum_to_one(rng):
    P = tsne.joint_probabilities(rng.standard_normal((15, 3)), 4.0)
    assert P.sum() == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(P, P.T)


def test_small_input_falls_back_to_pca():
    X = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [2.0, 0.0, -1.0]])
    with pytest.warns(UserWarning, match="principal"):
        Y = tsne.tsne(X)
    assert Y.shape == (3, 2)
    np.testing.assert_allclose(np.abs(Y[:, 0]), [np.sqrt(2), 0.0, np.sqrt(2)], atol=1e-12)
    np.testing.assert_allclose(Y[:, 1], 0.0, atol=1e-12)


def test_plot_pixel_identical_with_metadata(tmp_path, rng):
    Y = rng.standard_normal((12, 2))
    dom = np.repeat([0, 1, 2], 4)
    lab = np.tile([0, 1, 2, -1], 3)
    for name in ("a.png", "b.png"):
        tsne.plot_embedding(Y, dom, lab, tmp_path / name, "t", {"Description": "run 1"})
    assert sha(tmp_path / "a.png") == sha(tmp_path / "b.png")
    text = png_text_chunks(tmp_path / "a.png")
    assert text["Description"] == "run 1" and text["Software"] == "dsagc"


# ------------------------------------------------------------------ report


def test_format_cell():
    assert report.format_cell(0.8598, 0.0621) == "85.98±06.21"
    assert report.format_cell(0.9, 0.1234) == "90.00±12.34"


def _write_metrics(directory, method, n, et, seed, accs, dataset=None):
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "N", "E_t", "seed", "row", "target_subject", "accuracy", "std"])
        for t, a in enumerate(accs):
            w.writerow([method, n, et, seed, "fold", t, f"{a:.6f}", ""])
        w.writerow([method, n, et, seed, "summary", "", f"{np.mean(accs):.6f}",
                    f"{np.std(accs):.6f}"])
    if dataset is not None:
        (directory / "dataset.json").write_text(json.dumps(dataset))


def test_single_run_single_row(tmp_path):
    _write_metrics(tmp_path / "a", "DS-AGC", 2, 30, 0, [0.8, 0.9])
    labels, ns, cells = report.build_table(tmp_path)
    csv_text, table = report.render_report(labels, ns, cells)
    assert csv_text == "method,N=2\nDS-AGC,85.00±05.00\n"
    assert table.splitlines()[1].startswith("DS-AGC")


def test_two_ns_ascending_and_seed_pooling(tmp_path):
    _write_metrics(tmp_path / "n5", "DS-AGC", 5, 30, 0, [0.5])
    _write_metrics(tmp_path / "n2s0", "DS-AGC", 2, 30, 0, [0.6])
    _write_metrics(tmp_path / "n2s1", "DS-AGC", 2, 30, 1, [0.8])
    labels, ns, cells = report.build_table(tmp_path)
    assert ns == [2, 5]
    assert cells[("DS-AGC", 2)][:2] == pytest.approx((0.7, 0.1))
    assert report.render_report(labels, ns, cells)[0].splitlines()[0] == "method,N=2,N=5"


def test_et_labels_and_method_order(tmp_path):
    _write_metrics(tmp_path / "a", "DS-AGC", 2, 0, 0, [0.5])
    _write_metrics(tmp_path / "b", "DS-AGC", 2, 30, 0, [0.6])
    _write_metrics(tmp_path / "c", "DS-AGC[no_disc]", 2, 30, 0, [0.4])
    labels, _, _ = report.build_table(tmp_path)
    assert labels == ["DS-AGC E_t=0", "DS-AGC E_t=30", "DS-AGC[no_disc]"]


def test_conflicting_manifests_name_offenders(tmp_path):
    _write_metrics(tmp_path / "a", "DS-AGC", 2, 30, 0, [0.5], dataset={"n_subjects": 5})
    _write_metrics(tmp_path / "b", "DS-AGC", 2, 30, 1, [0.5], dataset={"n_subjects": 15})
    with pytest.raises(ProtocolError, match="different datasets") as exc:
        report.build_table(tmp_path)
    assert "a" in str(exc.value) and "b" in str(exc.value)


def test_conflicting_duplicate_runs(tmp_path):
    _write_metrics(tmp_path / "a", "DS-AGC", 2, 30, 0, [0.5])
    _write_metrics(tmp_path / "b", "DS-AGC", 2, 30, 0, [0.7])
    with pytest.raises(ProtocolError, match="conflicting"):
        report.build_table(tmp_path)
    _write_metrics(tmp_path / "b", "DS-AGC", 2, 30, 0, [0.5])
    assert report.build_table(tmp_path)[2][("DS-AGC", 2)][2] == 1


def test_no_metrics(tmp_path):
    with pytest.raises(ConfigError):
        report.build_table(tmp_path)


# ------------------------------------------------------------------ CLI


@pytest.fixture(scope="module")
def tiny_feat(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "tiny.feat"
    assert cli.main(["synth", "--out", str(p), "--n-subjects", "4", "--trials", "3",
                     "--segments", "2", "--channels", "8", "--bands", "2", "--seed", "5"]) == 0
    return p


TRAIN = ["--epochs", "3", "--et", "1", "--batch-size", "6", "--n-unlabeled", "1"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_checksum_and_count(tmp_path, capsys):
    a, b = tmp_path / "a.feat", tmp_path / "b.feat"
    assert cli.main(["synth", "--out", str(a), "--seed", "1"]) == 0
    assert "4500 records" in capsys.readouterr().out
    cli.main(["synth", "--out", str(b), "--seed", "1"])
    assert sha(a) == sha(b)
    assert len(cli.load_dataset(a)) == 4500


def test_train_writes_outputs(tiny_feat, tmp_path):
    before = sha(tiny_feat)
    out = tmp_path / "run"
    code = cli.main(["train", "--dataset", str(tiny_feat), "--out", str(out),
                     "--snapshot-epochs", "0", *TRAIN])
    assert code == 0 and sha(tiny_feat) == before
    rows = _rows(out / "metrics.csv")
    assert [r["row"] for r in rows] == ["fold"] * 4 + ["summary"]
    tag = "DS-AGC_N1_Et1_seed0"
    manifest = json.loads((out / "folds" / tag / "target02.json").read_text())
    assert manifest["split"]["T"] == [2] and manifest["split"]["U"] == [3]
    assert (out / "checkpoints" / tag / "target00_e0.ckpt").exists()
    assert (out / "checkpoints" / tag / "target00_final.ckpt").exists()
    assert cli.load_config(out / "run.cfg").train.max_epochs == 3


def test_ablate_tags_summary(tiny_feat, tmp_path):
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--dataset", str(tiny_feat), "--out", str(out), "--ablate",
                     "no_disc", "--no-checkpoints", *TRAIN]) == 0
    summaries = [r["method"] for r in _rows(out / "metrics.csv") if r["row"] == "summary"]
    assert summaries == ["DS-AGC", "DS-AGC[no_disc]"]


def test_et_sweep_five_summaries(tiny_feat, tmp_path):
    out = tmp_path / "sweep"
    assert cli.main(["train", "--dataset", str(tiny_feat), "--out", str(out), "--epochs", "100",
                     "--et-sweep", "0,10,30,50,100", "--batch-size", "6", "--n-unlabeled",
                     "1", "--no-checkpoints"]) == 0
    summaries = [r["E_t"] for r in _rows(out / "metrics.csv") if r["row"] == "summary"]
    assert summaries == ["0", "10", "30", "50", "100"]


def test_report_command(tiny_feat, tmp_path, capsys):
    out = tmp_path / "rep"
    cli.main(["train", "--dataset", str(tiny_feat), "--out", str(out / "n1"), "--no-checkpoints",
              *TRAIN])
    cli.main(["train", "--dataset", str(tiny_feat), "--out", str(out / "n0"), "--no-checkpoints",
              *TRAIN[:-1], "0"])
    capsys.readouterr()
    assert cli.main(["report", str(out)]) == 0
    text = (out / "report.csv").read_text().splitlines()
    assert text[0] == "method,N=0,N=1" and len(text) == 2
    assert "DS-AGC" in capsys.readouterr().out


def test_embed_plot_deterministic(tiny_feat, tmp_path):
    run = tmp_path / "emb"
    cli.main(["train", "--dataset", str(tiny_feat), "--out", str(run), *TRAIN])
    ck = run / "checkpoints" / "DS-AGC_N1_Et1_seed0" / "target01_final.ckpt"
    pngs = [tmp_path / "a.png", tmp_path / "b.png"]
    for p in pngs:
        assert cli.main(["embed-plot", "--checkpoint", str(ck), "--dataset", str(tiny_feat),
                         "--out", str(p), "--iters", "300", "--perplexity", "5"]) == 0
    assert sha(pngs[0]) == sha(pngs[1])
    meta = json.loads(png_text_chunks(pngs[0])["Description"])
    assert meta["target_subject"] == 1 and meta["stage"] == "final"


def test_extract_from_npz(tmp_path, rng):
    raw = tmp_path / "raw"
    raw.mkdir()
    for s in range(2):
        arrays = {f"trial_{k}": rng.standard_normal((4, 600)) for k in range(3)}
        np.savez(raw / f"{s + 1:02d}_rec.npz", labels=np.array([0, 1, 2]), **arrays)
    out = tmp_path / "x.feat"
    assert cli.main(["extract", "--raw", str(raw), "--out", str(out)]) == 0
    ds = cli.load_dataset(out)
    assert len(ds) == 2 * 3 * 3 and ds.subjects() == [1, 2]
    assert ds.manifest.n_channels == 4 and ds.manifest.n_bands == 5


def test_exit_codes(tiny_feat, tmp_path, capsys):
    assert cli.main(["train", "--dataset", str(tiny_feat), "--out", str(tmp_path / "x"),
                     "--n-unlabeled", "3"]) == 2
    assert cli.main(["train", "--dataset", str(tmp_path / "missing.feat"),
                     "--out", str(tmp_path / "y")]) == 1
    assert cli.main(["train", "--out", str(tmp_path / "z")]) == 2
    assert cli.main(["report", str(tmp_path / "empty")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_dics = true\n")
    assert cli.main(["train", "--config", str(bad), "--dataset", str(tiny_feat)]) == 2
    assert "unknown" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--ablate", "no_graph"])
    assert exc.value.code == 2
