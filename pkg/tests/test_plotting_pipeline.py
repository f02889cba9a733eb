import numpy as np
import pytest
from PIL import Image as PILImage

from aeprnn.aep import SweepRecord
from aeprnn.imaging import Image, degrade, gaussian_psf, load_corpus_image
from aeprnn.patches import PatchGeometry
from aeprnn.pipeline import EvalCase, component_seeds, noise_robustness, restore_and_score, train_restorer
from aeprnn.plotting import plot_noise_robustness, plot_restoration, plot_rfn_preview, plot_sweep, plot_training_log
from aeprnn.rfn import RfnConfig, normalize_image
from aeprnn.rnn import TrainConfig


def _is_png(path):
    with PILImage.open(path) as im:
        return im.format == "PNG" and im.size[0] > 100


class TestPlots:
    def test_training_log(self, tmp_path):
        plot_training_log([(1, 0.5), (2, 0.1), (3, 0.05)], tmp_path / "l.png")
        assert _is_png(tmp_path / "l.png")

    def test_sweep_with_bound(self, tmp_path):
        recs = [SweepRecord(4, 0.01, 0.3, 0), SweepRecord(400, 0.02, 0.05, 0),
                SweepRecord(40, float("nan"), float("nan"), 0, failed=True)]
        plot_sweep(recs, tmp_path / "s.png", mi_bits=0.1, n=81)
        assert _is_png(tmp_path / "s.png")

    def test_noise(self, tmp_path):
        res = {("plain-rnn", 1.0): np.array([28.0, 28.5]), ("rfn-rnn", 1.0): np.array([27.0, 27.5]),
               ("plain-rnn", 9.9): np.array([21.0, 21.5]), ("rfn-rnn", 9.9): np.array([22.0, 22.5])}
        plot_noise_robustness(res, tmp_path / "n.png")
        assert _is_png(tmp_path / "n.png")

    def test_images(self, tmp_path):
        img = load_corpus_image("moon").crop(0, 0, 32, 32)
        norm, div = normalize_image(Image(img.scaled(), 1.0), RfnConfig().kernel(), 0.25)
        plot_rfn_preview(img, norm, div, tmp_path / "r.png")
        plot_restoration(img, img, img, tmp_path / "x.png", "moon")
        assert _is_png(tmp_path / "r.png") and _is_png(tmp_path / "x.png")


class TestPipeline:
    def test_component_seeds(self):
        a = component_seeds(7, 4)
        assert a == component_seeds(7, 4)
        assert a[:2] == component_seeds(7, 2)
        assert len(set(a)) == 4
        assert component_seeds(8, 4) != a

    def test_restore_and_score(self):
        clean = load_corpus_image("camera").crop(90, 90, 24, 24)
        deg = degrade(clean, gaussian_psf(9, 1.2), 1.0, 0)
        g = PatchGeometry(3, 1, 1)
        params, log = train_restorer(clean, deg, TrainConfig(max_epochs=3, n_hidden=8), g)
        (row,) = restore_and_score(params, [EvalCase("cam", clean, deg)], g, "plain-rnn")
        assert row.name == "cam"
        assert row.psnr_gain == pytest.approx(row.after.psnr_db - row.before.psnr_db)
        assert row.restored.shape == clean.shape

    def test_noise_robustness_shape(self):
        clean = load_corpus_image("camera").crop(90, 90, 16, 16)
        tests = {"a": load_corpus_image("coins").crop(50, 50, 16, 16)}
        res = noise_robustness(clean, tests, [1.0, 5.0], ["plain-rnn", "rfn-rnn"], [0, 1],
                               TrainConfig(max_epochs=1, n_hidden=4), PatchGeometry(2, 1, 1), psf_size=5)
        assert set(res) == {(m, s) for m in ("plain-rnn", "rfn-rnn") for s in (1.0, 5.0)}
        assert all(v.shape == (2,) and np.all(np.isfinite(v)) for v in res.values())
