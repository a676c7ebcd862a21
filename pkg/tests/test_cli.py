import json

import numpy as np
import pytest

from emoface.cli import main
from emoface.images import load_float

SMALL_CONFIG = {
    "seed": 0,
    "scene": {"seed": 5, "n_poses": 2, "image_size": 8},
    "data": {"tags": ["happy", "sad"], "speakers": ["s1", "s2"],
             "frames_per_clip": 40, "heldout_frames": 12, "seed": 0},
    "audio2exp": {"d": 8, "d_h": 8, "n": 2, "ffn_hidden": [8],
                  "iterations": 6, "batch_size": 4, "lr": 1e-3, "seed": 0},
    "hyperplane": {"epochs": 400, "seed": 0},
    "field": {"trunk_layers": 2, "trunk_width": 8, "color_layers": 1,
              "color_width": 8, "pe_position": 2, "pe_direction": 1,
              "dtype": "f4", "seed": 0},
    "render": {"samples_per_ray": 8, "stratified": False,
               "resolution": [8, 8], "near": 1.5, "far": 4.5, "seed": 0},
    "training": {"total_iters": 10, "lr": 3e-3, "rays_per_batch": 32,
                 "seed": 0, "train_samples_per_ray": 8},
}


@pytest.fixture(scope="module")
def project(tmp_path_factory):
    """A tiny fully-trained project shared by the read-only command tests."""
    root = tmp_path_factory.mktemp("proj")
    cfg = json.loads(json.dumps(SMALL_CONFIG))
    for key in ("features_dir", "planes_dir", "checkpoints_dir", "scenes_dir",
                "out_dir"):
        cfg.setdefault("paths", {})[key] = str(root / key)
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    argv = ["--config", str(cfg_path)]
    assert main(argv + ["make-data"]) == 0
    assert main(argv + ["train-planes"]) == 0
    assert main(argv + ["train-audio2exp"]) == 0
    assert main(argv + ["train-renderer"]) == 0
    return root, cfg_path


def write_config(tmp_path, **patch):
    cfg = json.loads(json.dumps(SMALL_CONFIG))
    for key in ("features_dir", "planes_dir", "checkpoints_dir", "scenes_dir",
                "out_dir"):
        cfg.setdefault("paths", {})[key] = str(tmp_path / key)
    for dotted, value in patch.items():
        node = cfg
        parts = dotted.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestMakeData:
    def test_writes_clips_and_labels(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["--config", str(cfg), "make-data"]) == 0
        feats = tmp_path / "features_dir"
        assert len(list(feats.glob("*.efc"))) == 8
        assert (feats / "labels_train.json").exists()
        assert (feats / "labels_heldout.json").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["--config", str(cfg), "make-data"])
        f = tmp_path / "features_dir" / "s1__happy__train.efc"
        first = f.read_bytes()
        main(["--config", str(cfg), "make-data"])
        assert f.read_bytes() == first


class TestTrainPlanes:
    def test_two_tags_two_files_and_rerun_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["--config", str(cfg), "make-data"])
        assert main(["--config", str(cfg), "train-planes"]) == 0
        planes = sorted((tmp_path / "planes_dir").glob("*.plane.json"))
        assert [p.name for p in planes] == ["happy.plane.json", "sad.plane.json"]
        blobs = [p.read_bytes() for p in planes]
        assert main(["--config", str(cfg), "train-planes"]) == 0
        assert [p.read_bytes() for p in planes] == blobs

    def test_perfect_separation_on_synthetic_tags(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        main(["--config", str(cfg), "make-data"])
        main(["--config", str(cfg), "train-planes"])
        out = capsys.readouterr().out
        assert "train_accuracy=1.0000" in out

    def test_missing_dataset_fails(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        (tmp_path / "features_dir").mkdir()
        assert main(["--config", str(cfg), "train-planes"]) == 1
        assert "error" in capsys.readouterr().err


class TestTrainAudio2Exp:
    def test_missing_plane_reports_tag(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        main(["--config", str(cfg), "make-data"])
        main(["--config", str(cfg), "train-planes"])
        (tmp_path / "planes_dir" / "sad.plane.json").unlink()
        assert main(["--config", str(cfg), "train-audio2exp"]) == 1
        assert "sad" in capsys.readouterr().err

    def test_checkpoint_written_and_rmse_reported(self, project, capsys):
        root, cfg = project
        # project fixture already trained; retrain to capture output
        assert main(["--config", str(cfg), "train-audio2exp"]) == 0
        out = capsys.readouterr().out
        assert "held-out rmse" in out
        assert (root / "checkpoints_dir" / "audio2exp.ckpt").exists()

    def test_training_deterministic_checkpoint_bytes(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["--config", str(cfg), "make-data"])
        main(["--config", str(cfg), "train-planes"])
        ckpt = tmp_path / "checkpoints_dir" / "audio2exp.ckpt"
        assert main(["--config", str(cfg), "train-audio2exp"]) == 0
        first = ckpt.read_bytes()
        assert main(["--config", str(cfg), "train-audio2exp"]) == 0
        assert ckpt.read_bytes() == first


class TestTrainRenderer:
    def test_smoke_run_and_resume(self, project, capsys):
        root, cfg = project
        ckpt = root / "checkpoints_dir" / "field_full.ckpt"
        assert ckpt.exists()
        log = root / "out_dir" / "train_renderer_full.csv"
        assert log.exists()
        rows = log.read_text().strip().splitlines()
        assert len(rows) == SMALL_CONFIG["training"]["total_iters"] + 1
        assert main(["--config", str(cfg), "train-renderer", "--resume"]) == 0
        out = capsys.readouterr().out
        assert "psnr" in out
        for line in log.read_text().strip().splitlines()[1:]:
            assert "nan" not in line.lower()

    def test_resume_without_checkpoint_fails(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["--config", str(cfg), "train-renderer", "--resume"]) == 1
        assert "resume" in capsys.readouterr().err


class TestRender:
    def test_unknown_tag_lists_available(self, project, capsys):
        root, cfg = project
        assert main(["--config", str(cfg), "render", "--emotion", "anger"]) == 1
        err = capsys.readouterr().err
        assert "anger" in err and "happy" in err and "sad" in err

    def test_tau_zero_equals_unrefined_alpha_bit_exact(self, project):
        root, cfg = project
        out_a = root / "a.npy"
        assert main(["--config", str(cfg), "render", "--emotion", "happy",
                     "--tau", "0.0", "--out", str(root / "a.png"),
                     "--float-out", str(out_a)]) == 0
        # rendering the raw neutral expression directly, bypassing refinement
        from emoface.camera import orbit_pose
        from emoface.renderfield import load_field, render_frame
        from emoface.config import load_config
        pcfg = load_config(str(cfg))
        field = load_field(root / "checkpoints_dir" / "field_full.ckpt")
        pose = orbit_pose(0.0, 0.0, 3.0, 8, 8)
        direct = render_frame(field, pose, np.zeros(10), pcfg.render)
        assert np.array_equal(load_float(out_a), direct.astype(np.float32))

    def test_different_taus_change_the_image(self, project):
        root, cfg = project
        outs = []
        for tau in ("-2.0", "2.0"):
            fp = root / f"tau{tau}.npy"
            assert main(["--config", str(cfg), "render", "--emotion", "happy",
                         "--tau", tau, "--out", str(root / "t.png"),
                         "--float-out", str(fp)]) == 0
            outs.append(load_float(fp))
        assert not np.array_equal(outs[0], outs[1])

    def test_render_with_interpolation_endpoints(self, project):
        root, cfg = project
        base = ["--config", str(cfg), "render", "--tau", "1.0",
                "--out", str(root / "i.png")]
        for lam, pure in (("0.0", "happy"), ("1.0", "sad")):
            fp = root / f"interp{lam}.npy"
            assert main(base + ["--emotion", "happy", "--second-emotion", "sad",
                                "--interp", lam, "--float-out", str(fp)]) == 0
            fq = root / f"pure{pure}.npy"
            assert main(["--config", str(cfg), "render", "--emotion", pure,
                         "--tau", "1.0", "--out", str(root / "p.png"),
                         "--float-out", str(fq)]) == 0
            assert np.array_equal(load_float(fp), load_float(fq))


class TestSweep:
    def test_single_step_renders_midpoint(self, project):
        root, cfg = project
        out_dir = root / "sweep1"
        assert main(["--config", str(cfg), "sweep-dim", "--dim", "3",
                     "--steps", "1", "--out-dir", str(out_dir)]) == 0
        assert sorted(p.name for p in out_dir.glob("*.png")) == ["frame_000.png"]

    def test_default_range_is_plus_minus_1_8(self):
        from emoface.cli import _parser
        args = _parser().parse_args(["sweep-dim", "--dim", "0"])
        assert args.start == -1.8 and args.stop == 1.8

    def test_dim_out_of_range(self, project, capsys):
        root, cfg = project
        assert main(["--config", str(cfg), "sweep-dim", "--dim", "10"]) == 1

    def test_adjacent_frame_difference_shrinks_with_more_steps(self, project):
        root, cfg = project

        def max_adjacent_diff(steps, tag):
            out_dir = root / f"sweep_{tag}"
            assert main(["--config", str(cfg), "sweep-dim", "--dim", "1",
                         "--steps", str(steps), "--out-dir", str(out_dir)]) == 0
            from emoface.images import load_png
            frames = [load_png(p) for p in sorted(out_dir.glob("*.png"))]
            return max(np.abs(a - b).max() for a, b in zip(frames, frames[1:]))

        assert max_adjacent_diff(9, "fine") <= max_adjacent_diff(3, "coarse") + 1e-9


class TestConfigHandling:
    def test_unknown_config_key_fails(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["--config", str(cfg), "--set", "training.nope=1",
                     "make-data"]) == 1
        assert "unknown key" in capsys.readouterr().err

    def test_env_var_config_path(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path)
        monkeypatch.setenv("EMOFACE_CONFIG", str(cfg))
        assert main(["make-data"]) == 0

    def test_keyvalue_config_format(self, tmp_path):
        text = "\n".join([
            "data.tags=[\"happy\",\"sad\"]",
            "data.frames_per_clip=5",
            "data.heldout_frames=2",
            f"paths.features_dir={tmp_path / 'f'}",
            f"paths.planes_dir={tmp_path / 'p'}",
            f"paths.checkpoints_dir={tmp_path / 'c'}",
            f"paths.scenes_dir={tmp_path / 's'}",
            f"paths.out_dir={tmp_path / 'o'}",
        ])
        path = tmp_path / "config.cfg"
        path.write_text(text)
        assert main(["--config", str(path), "make-data"]) == 0
        assert len(list((tmp_path / "f").glob("*.efc"))) == 8
