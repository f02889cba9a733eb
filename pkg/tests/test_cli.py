import math

import numpy as np
import pytest

from aeprnn.cli import main
from aeprnn.imaging import Image, add_gaussian_noise, convolve2d, gaussian_psf, load_corpus_image, load_image, save_image
from aeprnn.rnn import read_weights


@pytest.fixture
def small_image(tmp_path):
    p = tmp_path / "x.pgm"
    save_image(load_corpus_image("camera").crop(100, 90, 24, 24), p)
    return p


def _config(tmp_path, small_image, **extra):
    lines = {"clean": small_image.name, "n_hidden": 8, "max_epochs": 2, "output_dir": "run"}
    lines.update(extra)
    p = tmp_path / "exp.cfg"
    p.write_text("".join(f"{k} = {v}\n" for k, v in lines.items()))
    return p


class TestBounds:
    def test_worked_example(self, capsys):
        assert main(["bounds", "--dim", "4", "--rate", "1", "--m", "8", "--delta-m", "0.1"]) == 0
        assert capsys.readouterr().out.splitlines() == ["m,delta_bound", "8,0.55"]

    def test_table(self, capsys):
        main(["bounds", "--dim", "2", "--rate", "1", "--m", "1", "2", "4", "--delta-m", "0"])
        assert capsys.readouterr().out.splitlines()[1:] == ["1,0.75", "2,0.5", "4,0"]

    def test_invalid_delta(self, capsys):
        assert main(["bounds", "--dim", "2", "--rate", "1", "--m", "1", "--delta-m", "1.5"]) == 2


class TestEval:
    def test_identical(self, small_image, capsys):
        assert main(["eval", "--ref", str(small_image), "--est", str(small_image)]) == 0
        assert capsys.readouterr().out.splitlines() == ["image_id,psnr_db,ssim", "x,inf,1.0000"]

    def test_shape_mismatch(self, tmp_path, small_image, capsys):
        other = tmp_path / "o.pgm"
        save_image(Image(np.zeros((5, 5))), other)
        assert main(["eval", "--ref", str(small_image), "--est", str(other)]) == 2
        assert "dimension" in capsys.readouterr().err


class TestDegrade:
    def test_protocol(self, tmp_path, small_image):
        out = tmp_path / "y.pgm"
        assert main(["degrade", "--in", str(small_image), "--out", str(out), "--psf", "25", "1.6",
                     "--noise", "1.4142", "--seed", "7"]) == 0
        img = load_image(small_image)
        expected = add_gaussian_noise(convolve2d(img, gaussian_psf(25, 1.6).taps), 1.4142, 7)
        ref = tmp_path / "ref.pgm"
        save_image(expected, ref)
        assert out.read_bytes() == ref.read_bytes()

    def test_byte_identical_reruns(self, tmp_path, small_image):
        outs = [tmp_path / "a.pgm", tmp_path / "b.pgm"]
        for o in outs:
            main(["degrade", "--in", str(small_image), "--out", str(o), "--seed", "3"])
        assert outs[0].read_bytes() == outs[1].read_bytes()

    def test_psf_export(self, tmp_path, small_image):
        psf = tmp_path / "psf.txt"
        main(["degrade", "--in", str(small_image), "--out", str(tmp_path / "y.pgm"), "--psf", "3", "1",
              "--psf-out", str(psf)])
        np.testing.assert_allclose(np.loadtxt(psf), gaussian_psf(3, 1.0).taps, rtol=1e-12)

    @pytest.mark.parametrize("flags", [["--psf", "4", "1.6"], ["--noise", "-1"]])
    def test_validation(self, tmp_path, small_image, flags):
        assert main(["degrade", "--in", str(small_image), "--out", str(tmp_path / "y.pgm"), *flags]) == 2

    def test_missing_input(self, tmp_path):
        assert main(["degrade", "--in", str(tmp_path / "no.pgm"), "--out", str(tmp_path / "y.pgm")]) == 2


class TestUsage:
    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 1

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["eval", "--ref", "a.pgm"])
        assert info.value.code == 1


class TestTrainInfer:
    def test_artifacts(self, tmp_path, small_image, capsys):
        cfg = _config(tmp_path, small_image, test_clean=small_image.name)
        assert main(["train", "--config", str(cfg)]) == 0
        run = tmp_path / "run"
        for name in ("weights.bin", "train_log.csv", "config.txt", "train_loss.png", "metrics.csv",
                     "train_degraded.pgm", "x_restored.pgm", "x_restoration.png"):
            assert (run / name).is_file(), name
        log = (run / "train_log.csv").read_text().splitlines()
        assert log[0] == "epoch,train_loss" and len(log) == 3
        assert capsys.readouterr().out.startswith("image_id,psnr_db,ssim\nx,")

    def test_reproducible_weights(self, tmp_path, small_image):
        cfg = _config(tmp_path, small_image)
        blobs = []
        for out in ("r1", "r2"):
            assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / out)]) == 0
            blobs.append((tmp_path / out / "weights.bin").read_bytes())
        assert blobs[0] == blobs[1]

    def test_seed_override(self, tmp_path, small_image):
        cfg = _config(tmp_path, small_image)
        main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "a"), "--seed", "1"])
        main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "b"), "--seed", "2"])
        assert (tmp_path / "a" / "weights.bin").read_bytes() != (tmp_path / "b" / "weights.bin").read_bytes()
        assert "seed = 1\n" in (tmp_path / "a" / "config.txt").read_text()

    def test_rerun_from_echo(self, tmp_path, small_image):
        cfg = _config(tmp_path, small_image)
        main(["train", "--config", str(cfg)])
        echo = tmp_path / "run" / "config.txt"
        main(["train", "--config", str(echo), "--out-dir", str(tmp_path / "again")])
        assert (tmp_path / "run" / "weights.bin").read_bytes() == (tmp_path / "again" / "weights.bin").read_bytes()

    def test_rfn_mode_dispatch(self, tmp_path, small_image):
        cfg = _config(tmp_path, small_image, mode="rfn-rnn")
        assert main(["train", "--config", str(cfg)]) == 0
        _, header = read_weights(tmp_path / "run" / "weights.bin")
        assert header["mode"] == "rfn-rnn"
        out = tmp_path / "r.pgm"
        assert main(["infer", "--weights", str(tmp_path / "run" / "weights.bin"), "--in", str(small_image),
                     "--out", str(out)]) == 0
        assert load_image(out).shape == (24, 24)

    def test_infer_thread_invariance(self, tmp_path, small_image):
        main(["train", "--config", str(_config(tmp_path, small_image))])
        w = str(tmp_path / "run" / "weights.bin")
        a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
        main(["infer", "--weights", w, "--in", str(small_image), "--out", str(a), "--threads", "1"])
        main(["infer", "--weights", w, "--in", str(small_image), "--out", str(b), "--threads", "4"])
        assert a.read_bytes() == b.read_bytes()

    def test_bad_config(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("n_hidden = 4\nlearnig_rate = 1\n")
        assert main(["train", "--config", str(p)]) == 2
        assert "bad.cfg:2: unknown key" in capsys.readouterr().err

    def test_no_training_image(self, tmp_path):
        assert main(["train", "--out-dir", str(tmp_path / "o")]) == 2

    def test_divergence_exit_code(self, tmp_path, small_image):
        cfg = _config(tmp_path, small_image, learning_rate=1e300, grad_clip="none")
        assert main(["train", "--config", str(cfg)]) == 3

    def test_corrupt_weights(self, tmp_path, small_image):
        w = tmp_path / "w.bin"
        w.write_bytes(b"JUNK")
        assert main(["infer", "--weights", str(w), "--in", str(small_image), "--out", str(tmp_path / "o.pgm")]) == 2


class TestSweep:
    def test_outputs(self, tmp_path, small_image, capsys):
        cfg = _config(tmp_path, small_image, l_t=3, n_left=1, n_right=1, max_epochs=20, learning_rate=0.005,
                      test_clean=small_image.name)
        assert main(["sweep", "--config", str(cfg), "--m-grid", "2", "20", "200"]) == 0
        run = tmp_path / "run"
        rows = (run / "sweep.csv").read_text().splitlines()
        assert rows[0] == "m,train_error,recovery_error,seed"
        assert [r.split(",")[0] for r in rows[1:]] == ["2", "20", "200"]
        assert (run / "sweep.png").is_file() and (run / "config.txt").is_file()
        n, mi = (run / "mi_bound.txt").read_text().splitlines()[1].split(",")
        assert n == "9" and math.isfinite(float(mi))

    def test_needs_test_images(self, tmp_path, small_image):
        assert main(["sweep", "--config", str(_config(tmp_path, small_image))]) == 2

    def test_m_too_large(self, tmp_path, small_image):
        cfg = _config(tmp_path, small_image, test_clean=small_image.name)
        assert main(["sweep", "--config", str(cfg), "--m-grid", "100000"]) == 2


class TestRfnPreview:
    def test_outputs(self, tmp_path, small_image):
        out = tmp_path / "prev"
        assert main(["rfn-preview", "--in", str(small_image), "--out-dir", str(out), "--tau", "0.2"]) == 0
        for name in ("normalized.pgm", "energy.pgm", "rfn_preview.png", "config.txt"):
            assert (out / name).is_file()
        assert load_image(out / "normalized.pgm").shape == (24, 24)
        assert "tau = 0.2\n" in (out / "config.txt").read_text()
