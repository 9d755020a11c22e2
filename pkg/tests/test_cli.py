import csv
import json
import logging
import shutil

import numpy as np
import pytest

from zernet.cli import (
    EXIT_CHECKPOINT,
    EXIT_DATA,
    EXIT_GEOMETRY,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    EXIT_VERIFY,
    color_ramp,
    load_config,
    main,
)
from zernet.mesh import load_samples, read_scalar_field, save_obj
from zernet.patches import PatchSet
from zernet.synthetic import icosphere

from test_mesh import CUBE_OBJ

TINY = {
    "version": 1,
    "model": {"filters": [4, 6], "rotations": 4, "linear_width": 8},
    "patch": {"max_order": 3, "n_samples": 400, "area_fraction": 0.1, "neighbor_k": 16},
    "train": {"lr": 0.01, "epochs": 4, "steps_per_epoch": 50},
}


@pytest.fixture
def cube(tmp_path):
    path = tmp_path / "cube.obj"
    path.write_text(CUBE_OBJ)
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny synthetic dataset plus a trained checkpoint, shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth", "--count", "3", "--seed", "2", "--level", "3", "--out", str(data)]) == 0
    config = root / "tiny.json"
    config.write_text(json.dumps(TINY))
    out = root / "run"
    code = main(["train", "--config", str(config), "--manifest", str(data / "manifest.json"),
                 "--out", str(out)])
    assert code == EXIT_OK
    return {"root": root, "data": data, "config": config, "out": out}


def read_log(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "step", "train_mse"]
    return [(int(e), int(s), float(m)) for e, s, m in rows[1:]]


class TestConfig:
    def test_overrides(self):
        cfg = load_config(None, ["model.filters=[16,32,64]", "train.lr=0.5", "patch.input_scale=none"])
        assert cfg["model"]["filters"] == [16, 32, 64]
        assert cfg["train"]["lr"] == 0.5
        assert cfg["patch"]["input_scale"] == "none"

    def test_defaults_mirror_architecture(self):
        cfg = load_config()
        assert cfg["model"]["filters"] == [128, 512, 1024]
        assert cfg["model"]["linear_width"] == 800
        assert cfg["patch"]["area_fraction"] == 0.01 and cfg["patch"]["max_order"] == 5

    @pytest.mark.parametrize("bad", [["model.nope=1"], ["model=3"], ["noequals"]])
    def test_bad_override_is_usage_error(self, bad, cube, tmp_path):
        code = main(["patches", str(tmp_path / "s.bin"), "--out", str(tmp_path / "p.bin"),
                     "--set", *bad])
        assert code == EXIT_USAGE

    def test_unknown_file_key(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text('{"model": {"filterz": [1]}}')
        code = main(["train", "--config", str(tmp_path / "c.json"), "--manifest", "x", "--out",
                     str(tmp_path / "o")])
        assert code == EXIT_USAGE
        assert "filterz" in capsys.readouterr().err

    def test_argparse_errors_exit_1(self):
        with pytest.raises(SystemExit) as err:
            main(["sample"])
        assert err.value.code == EXIT_USAGE


class TestSample:
    def test_cube_deterministic(self, cube, tmp_path, capsys):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        assert main(["sample", str(cube), "--count", "100", "--seed", "7", "--out", str(a)]) == 0
        assert "V=8 F=12 S=100" in capsys.readouterr().out
        assert main(["sample", str(cube), "--count", "100", "--seed", "7", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert len(load_samples(a).positions) == 100

    def test_count_zero(self, cube, tmp_path):
        assert main(["sample", str(cube), "--count", "0", "--out", str(tmp_path / "s")]) == 1

    def test_missing_file(self, tmp_path, capsys):
        missing = tmp_path / "nope.obj"
        assert main(["sample", str(missing), "--out", str(tmp_path / "s")]) == EXIT_IO
        assert str(missing) in capsys.readouterr().err

    def test_parse_error(self, tmp_path):
        (tmp_path / "bad.obj").write_text("v 0 0 x\n")
        assert main(["sample", str(tmp_path / "bad.obj"), "--out", str(tmp_path / "s")]) == EXIT_IO

    def test_degenerate(self, tmp_path):
        (tmp_path / "flat.obj").write_text("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n")
        code = main(["sample", str(tmp_path / "flat.obj"), "--out", str(tmp_path / "s")])
        assert code == EXIT_GEOMETRY


@pytest.fixture(scope="module")
def sphere_samples(tmp_path_factory):
    root = tmp_path_factory.mktemp("sphere")
    save_obj(icosphere(4), root / "sphere.obj")
    assert main(["sample", str(root / "sphere.obj"), "--out", str(root / "s.bin")]) == 0
    return root / "s.bin"


class TestPatches:
    def test_defaults_cover_sphere(self, sphere_samples, tmp_path, capsys):
        out = tmp_path / "p.bin"
        assert main(["patches", str(sphere_samples), "--out", str(out)]) == 0
        text = capsys.readouterr().out
        ps = PatchSet.load(out)
        assert len(ps) == 8000
        assert (ps.counts >= 2 * 21).mean() >= 0.99
        assert "valid:" in text and "members" in text
        again = tmp_path / "q.bin"
        assert main(["patches", str(sphere_samples), "--out", str(again)]) == 0
        assert out.read_bytes() == again.read_bytes()

    def test_large_area_fraction_warns(self, cube, tmp_path, caplog):
        samples = tmp_path / "s.bin"
        assert main(["sample", str(cube), "--count", "300", "--out", str(samples)]) == 0
        with caplog.at_level(logging.WARNING, logger="zernet"):
            code = main(["patches", str(samples), "--out", str(tmp_path / "p.bin"),
                         "--set", "patch.area_fraction=0.5", "--set", "patch.max_order=2"])
        assert code == 0
        assert "flat-disk radius approximation is poor" in caplog.text

    def test_bad_sample_file(self, tmp_path):
        (tmp_path / "s.bin").write_bytes(b"garbage")
        assert main(["patches", str(tmp_path / "s.bin"), "--out", str(tmp_path / "p")]) == EXIT_IO


class TestTrain:
    def test_loss_drops(self, workspace):
        rows = read_log(workspace["out"] / "loss.csv")
        assert len(rows) == 200
        assert rows[-1][2] <= 0.1 * rows[0][2]
        assert [r[1] for r in rows] == list(range(1, 201))
        for e in range(1, 5):
            assert (workspace["out"] / f"epoch{e:04d}.ckpt").exists()
        assert not (workspace["out"] / ".lock").exists()

    def test_cache_reused_and_deterministic(self, workspace, tmp_path):
        cache = workspace["out"] / "cache"
        before = sorted(p.name for p in cache.iterdir())
        assert len(before) == 6
        out = tmp_path / "again"
        shutil.copytree(cache, out / "cache")
        stamps = {p.name: p.stat().st_mtime_ns for p in (out / "cache").iterdir()}
        assert main(["train", "--config", str(workspace["config"]), "--manifest",
                     str(workspace["data"] / "manifest.json"), "--out", str(out)]) == 0
        # cache hits leave the copied files untouched
        assert {p.name: p.stat().st_mtime_ns for p in (out / "cache").iterdir()} == stamps
        assert sorted(stamps) == before
        assert (out / "last.ckpt").read_bytes() == (workspace["out"] / "last.ckpt").read_bytes()

    def test_resume_matches_uninterrupted(self, workspace, tmp_path):
        out = tmp_path / "resume"
        args = ["train", "--config", str(workspace["config"]), "--manifest",
                str(workspace["data"] / "manifest.json"), "--out", str(out)]
        assert main(args + ["--set", "train.epochs=2"]) == 0
        assert main(args + ["--resume"]) == 0
        assert (out / "last.ckpt").read_bytes() == (workspace["out"] / "last.ckpt").read_bytes()
        assert read_log(out / "loss.csv") == read_log(workspace["out"] / "loss.csv")

    def test_field_mismatch_names_entry(self, workspace, tmp_path, capsys):
        data = tmp_path / "data"
        shutil.copytree(workspace["data"], data)
        (data / "mesh_001.txt").write_text("1.0\n")
        code = main(["train", "--config", str(workspace["config"]), "--manifest",
                     str(data / "manifest.json"), "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA
        assert "entry 1" in capsys.readouterr().err

    def test_lockfile(self, workspace, tmp_path, capsys):
        out = tmp_path / "locked"
        out.mkdir()
        (out / ".lock").write_text("123")
        code = main(["train", "--config", str(workspace["config"]), "--manifest",
                     str(workspace["data"] / "manifest.json"), "--out", str(out)])
        assert code == EXIT_IO
        assert "locked" in capsys.readouterr().err

    def test_resume_without_checkpoint(self, workspace, tmp_path):
        code = main(["train", "--config", str(workspace["config"]), "--manifest",
                     str(workspace["data"] / "manifest.json"), "--out", str(tmp_path / "o"),
                     "--resume"])
        assert code == EXIT_IO


class TestPredictEvalExport:
    def test_predict(self, workspace, tmp_path):
        mesh = workspace["data"] / "mesh_002.obj"
        out = tmp_path / "pred"
        assert main(["predict", "--checkpoint", str(workspace["out"] / "last.ckpt"),
                     "--mesh", str(mesh), "--out", str(out)]) == 0
        txt = read_scalar_field(out.with_suffix(".txt"))
        np.testing.assert_array_equal(read_scalar_field(out.with_suffix(".csv")), txt)
        assert len(txt) == len(read_scalar_field(workspace["data"] / "mesh_002.txt"))
        assert np.isfinite(txt).all()

    def test_eval_truth_against_itself(self, workspace, tmp_path, capsys):
        truth = workspace["data"] / "mesh_000.txt"
        assert main(["eval", "--truth", str(truth), "--pred", str(truth),
                     "--json", str(tmp_path / "r.json")]) == 0
        report = json.loads((tmp_path / "r.json").read_text())[0]
        assert report["mape"] == 0.0 and report["pcc"] == pytest.approx(1.0)
        assert report["hit_rates"] == {"10": 100.0, "20": 100.0}
        assert "HR(10%)" in capsys.readouterr().out

    def test_eval_with_checkpoint(self, workspace, capsys):
        code = main(["eval", "--checkpoint", str(workspace["out"] / "last.ckpt"),
                     "--mesh", str(workspace["data"] / "mesh_001.obj"),
                     "--truth", str(workspace["data"] / "mesh_001.txt")])
        assert code == 0
        assert "mesh_001" in capsys.readouterr().out

    def test_architecture_mismatch(self, workspace, tmp_path, capsys):
        code = main(["predict", "--checkpoint", str(workspace["out"] / "last.ckpt"),
                     "--mesh", str(workspace["data"] / "mesh_000.obj"), "--out",
                     str(tmp_path / "p"), "--config", str(workspace["config"]),
                     "--set", "model.filters=[4,7]"])
        assert code == EXIT_CHECKPOINT
        err = capsys.readouterr().err
        assert "expected" in err and "found" in err and "[4,7]" in err and "[4,6]" in err

    def test_export_constant(self, cube, tmp_path, capsys):
        field = tmp_path / "f.txt"
        field.write_text("2.5\n" * 8)
        out = tmp_path / "c.ply"
        assert main(["export", "--mesh", str(cube), "--field", str(field), "--out", str(out)]) == 0
        info = json.loads(out.with_suffix(".json").read_text())
        assert info["min"] == info["max"] == 2.5 and info["constant"] is True
        assert "min == max" in capsys.readouterr().out
        data = out.read_bytes()
        body = data[data.index(b"end_header\n") + 11:]
        rec = np.frombuffer(body[: 8 * 19], dtype=[("xyz", "<f4", 3), ("q", "<f4"), ("rgb", "u1", 3)])
        assert len(np.unique(rec["rgb"], axis=0)) == 1
        np.testing.assert_array_equal(rec["q"], 2.5)

    def test_export_from_checkpoint(self, workspace, tmp_path):
        out = tmp_path / "m.ply"
        assert main(["export", "--mesh", str(workspace["data"] / "mesh_000.obj"), "--checkpoint",
                     str(workspace["out"] / "last.ckpt"), "--out", str(out)]) == 0
        assert json.loads(out.with_suffix(".json").read_text())["constant"] is False

    def test_eval_loocv(self, workspace, tmp_path, capsys):
        code = main(["eval", "--manifest", str(workspace["data"] / "manifest.json"),
                     "--config", str(workspace["config"]), "--set", "train.epochs=1",
                     "--set", "train.steps_per_epoch=5", "--out", str(tmp_path / "w")])
        assert code == 0
        out = capsys.readouterr().out
        assert "fold2" in out and "linear-fold0" in out


def test_color_ramp():
    rgb, info = color_ramp([0.0, 0.5, 1.0])
    np.testing.assert_array_equal(rgb, [[0, 0, 255], [128, 0, 128], [255, 0, 0]])
    assert info == {"min": 0.0, "max": 1.0, "constant": False}


class TestGradcheck:
    def test_default_passes_and_is_reproducible(self, capsys):
        assert main(["gradcheck"]) == EXIT_OK
        first = capsys.readouterr().out
        assert main(["gradcheck"]) == EXIT_OK
        assert capsys.readouterr().out == first
        assert "conv0" in first and "PASS" in first

    def test_corrupted_gradient(self, capsys):
        assert main(["gradcheck", "--corrupt", "conv1"]) == EXIT_VERIFY
        assert "FAIL" in capsys.readouterr().out
