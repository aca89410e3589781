import json
import os

import numpy as np
import pytest

from spectralign import WarpSpec, load_mesh, make_cloth_pair, save_mesh
from spectralign.cli import main

TINY = {
    "K": 12,
    "hidden_width": 32,
    "hidden_layers": 2,
    "stage1_iterations": 150,
    "stage1_lr": 1e-3,
    "stage2_iterations": 100,
    "stage2_lr": 2e-3,
    "template_iterations": 50,
    "eval_samples": 2000,
    "use_colors": False,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    pair = make_cloth_pair(10, 10, warp=WarpSpec(bend=1.0), seed=2)
    paths = {
        "source": str(root / "source.ply"),
        "target": str(root / "target.ply"),
        "config": str(root / "config.json"),
        "root": str(root),
    }
    save_mesh(pair.source, paths["source"])
    save_mesh(pair.target, paths["target"])
    with open(paths["config"], "w") as fh:
        json.dump(TINY, fh)
    return paths


class TestExitCodes:
    def test_config_error_is_2(self, workspace, tmp_path):
        bad = str(tmp_path / "bad.json")
        with open(bad, "w") as fh:
            json.dump({"nonsense_key": 1}, fh)
        rc = main(["align", workspace["source"], workspace["target"],
                   "--config", bad, "--out-dir", str(tmp_path / "out")])
        assert rc == 2

    def test_input_error_is_3(self, workspace, tmp_path):
        rc = main(["align", str(tmp_path / "missing.ply"), workspace["target"],
                   "--config", workspace["config"], "--out-dir", str(tmp_path / "out")])
        assert rc == 3

    def test_corrupt_target_no_stage2_outputs(self, workspace, tmp_path):
        corrupt = str(tmp_path / "corrupt.ply")
        with open(corrupt, "w") as fh:
            fh.write("not a mesh at all")
        out = str(tmp_path / "out")
        rc = main(["align", workspace["source"], corrupt,
                   "--config", workspace["config"], "--out-dir", out])
        assert rc == 3
        assert not os.path.exists(os.path.join(out, "point_map.txt"))

    def test_pose_without_rig_is_2(self, workspace, tmp_path):
        pose = str(tmp_path / "pose.json")
        with open(pose, "w") as fh:
            json.dump({"rotations": [[0, 0, 0]]}, fh)
        rc = main(["smooth-template", workspace["source"], "--pose", pose,
                   "--config", workspace["config"],
                   "--out", str(tmp_path / "t.ply")])
        assert rc == 2


class TestSmoothTemplate:
    def test_identity_passthrough(self, workspace, tmp_path, capsys):
        cfgpath = str(tmp_path / "cfg.json")
        with open(cfgpath, "w") as fh:
            json.dump({**TINY, "w2": 0.0, "w3": 0.0}, fh)
        out = str(tmp_path / "template.ply")
        rc = main(["smooth-template", workspace["source"],
                   "--config", cfgpath, "--out", out])
        assert rc == 0
        result = load_mesh(out)
        original = load_mesh(workspace["source"])
        assert np.abs(result.vertices - original.vertices).max() < 1e-9

    def test_smoothing_reduces_wrinkles(self, tmp_path):
        from spectralign import grid_mesh

        base = grid_mesh(12, 12)
        wrinkled = base.with_vertices(
            WarpSpec(wrinkle_amp=0.04, wrinkle_freq=3).apply(base.vertices)
        )
        src = str(tmp_path / "w.ply")
        save_mesh(wrinkled, src)
        cfgpath = str(tmp_path / "cfg.json")
        with open(cfgpath, "w") as fh:
            json.dump({"w1": 1e-6, "w2": 1e-6, "w3": 1.0,
                       "template_iterations": 1500, "template_lr": 5e-3}, fh)
        out = str(tmp_path / "smooth.ply")
        assert main(["smooth-template", src, "--config", cfgpath, "--out", out]) == 0
        L = wrinkled.uniform_laplacian()

        def energy(mesh):
            return float(np.sum((L @ mesh.vertices) ** 2))

        assert energy(load_mesh(out)) < energy(wrinkled) / 100.0


class TestAlignAndEval:
    @pytest.fixture(scope="class")
    def run_dir(self, workspace, tmp_path_factory):
        out = str(tmp_path_factory.mktemp("run"))
        rc = main(["align", workspace["source"], workspace["target"],
                   "--config", workspace["config"], "--out-dir", out])
        assert rc == 0
        return out

    def test_artifacts_present(self, run_dir):
        for name in ("aligned.ply", "point_map.txt", "fmap.txt",
                     "stage1_loss.csv", "manifest.json"):
            assert os.path.exists(os.path.join(run_dir, name)), name

    def test_eval_self_alignment(self, workspace, tmp_path, capsys):
        report_path = str(tmp_path / "metrics.json")
        rc = main(["eval", workspace["target"], workspace["target"],
                   "--config", workspace["config"], "--out", report_path])
        assert rc == 0
        report = json.load(open(report_path))
        assert report["chamfer"] == 0.0
        assert report["normal_cosine"] == pytest.approx(1.0, abs=1e-6)

    def test_eval_correspondence_zero_on_truth(self, workspace, run_dir, tmp_path):
        truth_path = str(tmp_path / "truth.txt")
        n = load_mesh(workspace["source"]).n_vertices
        np.savetxt(truth_path, np.column_stack([np.arange(n), np.arange(n)]), fmt="%d")
        report_path = str(tmp_path / "m.json")
        rc = main(["eval", os.path.join(run_dir, "aligned.ply"), workspace["target"],
                   "--point-map", truth_path, "--truth", truth_path,
                   "--config", workspace["config"], "--out", report_path])
        assert rc == 0
        report = json.load(open(report_path))
        assert report["correspondence"]["mean"] == 0.0

    def test_eval_mismatched_truth_is_3(self, workspace, run_dir, tmp_path):
        short = str(tmp_path / "short.txt")
        np.savetxt(short, np.column_stack([np.arange(5), np.arange(5)]), fmt="%d")
        rc = main(["eval", os.path.join(run_dir, "aligned.ply"), workspace["target"],
                   "--point-map", os.path.join(run_dir, "point_map.txt"),
                   "--truth", short, "--config", workspace["config"]])
        assert rc == 3

    def test_rerun_reproduces(self, run_dir, tmp_path):
        out2 = str(tmp_path / "rerun")
        rc = main(["rerun", os.path.join(run_dir, "manifest.json"), "--out-dir", out2])
        assert rc == 0
        for name in ("point_map.txt", "fmap.txt"):
            a = open(os.path.join(run_dir, name), "rb").read()
            b = open(os.path.join(out2, name), "rb").read()
            assert a == b


class TestStagedCommands:
    def test_spectral_stage1_stage2_transfer_chain(self, workspace, tmp_path):
        out = str(tmp_path / "staged")
        basis_path = str(tmp_path / "basis.sbas")
        rc = main(["spectral", workspace["source"], "--config", workspace["config"],
                   "--out", basis_path,
                   "--eigenvalues", str(tmp_path / "lam.txt")])
        assert rc == 0
        lam = np.loadtxt(str(tmp_path / "lam.txt"))
        assert len(lam) == TINY["K"] and (lam > 0).all()

        rc = main(["stage1", workspace["source"], workspace["target"],
                   "--config", workspace["config"], "--out-dir", out])
        assert rc == 0
        assert os.path.exists(os.path.join(out, "coarse_point_map.txt"))

        rc = main(["stage2", workspace["source"], workspace["target"],
                   "--p2p", os.path.join(out, "coarse_point_map.txt"),
                   "--config", workspace["config"], "--out-dir", out])
        assert rc == 0
        assert os.path.exists(os.path.join(out, "emb_source.mtx"))

        rc = main(["transfer", workspace["source"], workspace["target"],
                   "--emb-source", os.path.join(out, "emb_source.mtx"),
                   "--emb-target", os.path.join(out, "emb_target.mtx"),
                   "--config", workspace["config"], "--out-dir", out])
        assert rc == 0
        aligned = load_mesh(os.path.join(out, "aligned.ply"))
        target = load_mesh(workspace["target"])
        assert aligned.n_vertices == target.n_vertices

    def test_refine_flag_variants(self, workspace, tmp_path):
        for mode in ("linear", "none"):
            out = str(tmp_path / f"ref_{mode}")
            rc = main(["align", workspace["source"], workspace["target"],
                       "--config", workspace["config"], "--refine", mode,
                       "--out-dir", out])
            assert rc == 0
            assert os.path.exists(os.path.join(out, "point_map.txt"))
            assert not os.path.exists(os.path.join(out, "stage2_loss.csv"))
