import json

import numpy as np
import pytest
import torch
from skimage.color import deltaE_ciede2000 as sk_ciede2000
from skimage.metrics import structural_similarity as sk_ssim

from conftest import textured
from darkdeblur.blursynth import make_rng
from darkdeblur.metrics import (EvalReport, MetricRecord, PSNR_CAP_DB,
                                REFERENCE_SCORES, ciede2000, delta_e, evaluate,
                                psnr, render_table, score_pair, srgb_to_lab,
                                ssim)

# CIEDE2000 conformance vectors: (L1, a1, b1), (L2, a2, b2), expected dE00.
# The set exercises every branch of the formula: the a'-rescaling G term,
# hue averaging across the 0/360 wrap, zero-chroma degeneracy, the
# blue-region rotation term, and small differences near the JND.
CIEDE2000_CASES = [
    ((50.0000, 2.6772, -79.7751), (50.0000, 0.0000, -82.7485), 2.0425),
    ((50.0000, 3.1571, -77.2803), (50.0000, 0.0000, -82.7485), 2.8615),
    ((50.0000, 2.8361, -74.0200), (50.0000, 0.0000, -82.7485), 3.4412),
    ((50.0000, -1.3802, -84.2814), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, -1.1848, -84.8006), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, -0.9009, -85.5211), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, 0.0000, 0.0000), (50.0000, -1.0000, 2.0000), 2.3669),
    ((50.0000, -1.0000, 2.0000), (50.0000, 0.0000, 0.0000), 2.3669),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0009), 7.1792),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0010), 7.1792),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0011), 7.2195),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0012), 7.2195),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0009, -2.4900), 4.8045),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0010, -2.4900), 4.8045),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0011, -2.4900), 4.7461),
    ((50.0000, 2.5000, 0.0000), (50.0000, 0.0000, -2.5000), 4.3065),
    ((50.0000, 2.5000, 0.0000), (73.0000, 25.0000, -18.0000), 27.1492),
    ((50.0000, 2.5000, 0.0000), (61.0000, -5.0000, 29.0000), 22.8977),
    ((50.0000, 2.5000, 0.0000), (56.0000, -27.0000, -3.0000), 31.9030),
    ((50.0000, 2.5000, 0.0000), (58.0000, 24.0000, 15.0000), 19.4535),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.1736, 0.5854), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.2972, 0.0000), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 1.8634, 0.5757), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.2592, 0.3350), 1.0000),
    ((60.2574, -34.0099, 36.2677), (60.4626, -34.1751, 39.4387), 1.2644),
    ((63.0109, -31.0961, -5.8663), (62.8187, -29.7946, -4.0864), 1.2630),
    ((61.2901, 3.7196, -5.3901), (61.4292, 2.2480, -4.9620), 1.8731),
    ((35.0831, -44.1164, 3.7933), (35.0232, -40.0716, 1.5901), 1.8645),
    ((22.7233, 20.0904, -46.6940), (23.0331, 14.9730, -42.5619), 2.0373),
    ((36.4612, 47.8580, 18.3852), (36.2715, 50.5065, 21.2231), 1.4146),
    ((90.8027, -2.0831, 1.4410), (91.1528, -1.6435, 0.0447), 1.4441),
    ((90.9257, -0.5406, -0.9208), (88.6381, -0.8985, -0.7239), 1.5381),
    ((6.7747, -0.2908, -2.4247), (5.8714, -0.0985, -2.2286), 0.6377),
    ((2.0776, 0.0795, -1.1350), (0.9033, -0.0636, -0.5514), 0.9082),
]


class TestPsnr:
    def test_identity_hits_cap(self):
        x = textured(32, 32, seed=0)
        assert psnr(x, x) == PSNR_CAP_DB

    def test_constant_offset_analytic(self):
        a = np.zeros((3, 16, 16), dtype=np.float64)
        b = np.full((3, 16, 16), 0.1, dtype=np.float64)
        assert abs(psnr(a, b) - 20.0) < 1e-9

    def test_matches_scalar_mse(self):
        a = textured(17, 19, seed=1).astype(np.float64)
        b = textured(17, 19, seed=2).astype(np.float64)
        mse = 0.0
        for c in range(3):
            for i in range(17):
                for j in range(19):
                    mse += (a[c, i, j] - b[c, i, j]) ** 2
        mse /= a.size
        assert abs(psnr(a, b) - 10 * np.log10(1 / mse)) < 1e-9

    def test_monotone_in_noise(self):
        x = textured(64, 64, seed=3).astype(np.float64)
        n = make_rng(4).standard_normal(x.shape)
        vals = [psnr(np.clip(x + d * n, 0, 1), x) for d in (0.01, 0.05, 0.1)]
        assert vals[0] > vals[1] > vals[2]

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 8, 8)), np.zeros((3, 8, 9)))


class TestSsim:
    def test_self_is_exactly_one(self):
        x = textured(48, 48, seed=5)
        assert ssim(x, x) == 1.0

    def test_symmetry(self):
        a = textured(48, 48, seed=6)
        b = textured(48, 48, seed=7)
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_constant_pair_closed_form(self):
        a = np.full((1, 24, 24), 0.3)
        b = np.full((1, 24, 24), 0.4)
        c1 = 0.01 ** 2
        want = (2 * 0.3 * 0.4 + c1) / (0.3 ** 2 + 0.4 ** 2 + c1)
        assert abs(ssim(a, b) - want) < 1e-12

    def test_matches_reference_implementation(self):
        a = textured(96, 80, seed=8).astype(np.float64)
        b = np.clip(a + 0.1 * make_rng(9).standard_normal(a.shape), 0, 1)
        vals = [sk_ssim(a[c], b[c], gaussian_weights=True, sigma=1.5,
                        use_sample_covariance=False, data_range=1.0)
                for c in range(3)]
        assert abs(ssim(a, b) - float(np.mean(vals))) < 1e-12

    def test_monotone_degradation(self):
        x = textured(64, 64, seed=10).astype(np.float64)
        n = make_rng(11).standard_normal(x.shape)
        vals = [ssim(np.clip(x + d * n, 0, 1), x) for d in (0.01, 0.05, 0.1)]
        assert vals[0] > vals[1] > vals[2]

    def test_too_small_rejected(self):
        x = np.zeros((3, 8, 8))
        with pytest.raises(ValueError):
            ssim(x, x)


class TestLab:
    def test_white_maps_to_L100(self):
        lab = srgb_to_lab(np.ones((3, 1, 1)))
        assert np.allclose(lab.ravel(), [100.0, 0.0, 0.0], atol=1e-9)

    def test_black_maps_to_origin(self):
        lab = srgb_to_lab(np.zeros((3, 1, 1)))
        assert np.allclose(lab.ravel(), [0.0, 0.0, 0.0], atol=1e-9)

    def test_grey_axis_is_neutral(self):
        lab = srgb_to_lab(np.full((3, 1, 1), 0.5))
        assert abs(lab[0, 0, 0] - 53.39) < 0.01
        assert np.abs(lab[1:]).max() < 1e-9

    def test_close_to_reference_implementation(self):
        from skimage.color import rgb2lab
        img = textured(16, 16, seed=12).astype(np.float64)
        ref = rgb2lab(img.transpose(1, 2, 0)).transpose(2, 0, 1)
        # whitepoint conventions differ in the 4th decimal of the D65 XYZ
        assert np.abs(srgb_to_lab(img) - ref).max() < 0.05


class TestCiede2000:
    @pytest.mark.parametrize("lab1,lab2,want", CIEDE2000_CASES)
    def test_conformance_vectors(self, lab1, lab2, want):
        got = ciede2000(np.array(lab1).reshape(3, 1),
                        np.array(lab2).reshape(3, 1)).item()
        assert abs(got - want) < 1e-4

    def test_matches_reference_implementation(self):
        rng = make_rng(13)
        lab1 = np.stack([rng.uniform(0, 100, 64), rng.uniform(-60, 60, 64),
                         rng.uniform(-60, 60, 64)])
        lab2 = np.stack([rng.uniform(0, 100, 64), rng.uniform(-60, 60, 64),
                         rng.uniform(-60, 60, 64)])
        ref = sk_ciede2000(lab1.T, lab2.T)
        assert np.abs(ciede2000(lab1, lab2) - ref).max() < 1e-7

    def test_identical_colors_zero(self):
        lab = np.array([[53.0], [20.0], [-30.0]])
        assert ciede2000(lab, lab).item() == 0.0

    def test_white_vs_black_is_100(self):
        white = srgb_to_lab(np.ones((3, 1, 1)))
        black = srgb_to_lab(np.zeros((3, 1, 1)))
        assert ciede2000(white, black).item() == pytest.approx(100.0, abs=1e-6)

    def test_mean_delta_e_monotone(self):
        x = textured(32, 32, seed=14).astype(np.float64)
        n = make_rng(15).standard_normal(x.shape)
        vals = [delta_e(np.clip(x + d * n, 0, 1), x) for d in (0.01, 0.05, 0.1)]
        assert vals[0] < vals[1] < vals[2]

    def test_delta_e_identity_zero(self):
        x = textured(24, 24, seed=16)
        assert delta_e(x, x) == 0.0


class _IdentityModel(torch.nn.Module):
    def restore(self, x):
        return x


def make_pairs(n=3, noisy=True):
    pairs = []
    for i in range(n):
        sharp = textured(32, 32, seed=100 + i)
        blurry = np.clip(sharp + (0.05 if noisy else 0.0), 0, 1)
        pairs.append((f"im{i}", blurry, sharp))
    return pairs


class TestEvaluate:
    def test_baseline_scores_blurry_inputs(self):
        rep = evaluate(None, make_pairs(), dataset="unit", method="none")
        assert len(rep.records) == 3 and not rep.failures
        assert all(r.psnr < PSNR_CAP_DB for r in rep.records)

    def test_model_inference_path(self):
        pairs = make_pairs(noisy=False)
        rep = evaluate(_IdentityModel(), pairs)
        assert all(r.psnr == PSNR_CAP_DB for r in rep.records)
        assert all(r.ssim == 1.0 for r in rep.records)

    def test_output_directory_path(self, tmp_path):
        from darkdeblur import images
        pairs = make_pairs()
        for name, _, sharp in pairs:
            images.save_image(tmp_path / f"{name}.png", sharp)
        rep = evaluate(tmp_path, pairs)
        assert all(r.psnr > 45 for r in rep.records)  # only 8-bit quantisation

    def test_missing_output_becomes_failure_row(self, tmp_path):
        from darkdeblur import images
        pairs = make_pairs()
        images.save_image(tmp_path / "im0.png", pairs[0][2])
        rep = evaluate(tmp_path, pairs)
        assert len(rep.records) == 1
        assert [f["image_id"] for f in rep.failures] == ["im1", "im2"]

    def test_mean_aggregation_exact(self):
        recs = [MetricRecord("a", 30.0, 0.9, 2.0),
                MetricRecord("b", 34.0, 0.8, 4.0)]
        rep = EvalReport(dataset="d", method="m", records=recs)
        assert rep.mean_psnr == 32.0
        assert rep.mean_ssim == pytest.approx(0.85)
        assert rep.mean_delta_e == 3.0

    def test_json_payload(self):
        rep = EvalReport(dataset="d", method="m",
                         records=[MetricRecord("a", 30.0, 0.9, 2.0)])
        payload = json.loads(rep.to_json())
        assert payload["delta_e_formula"] == "CIEDE2000"
        assert payload["mean_psnr"] == 30.0
        assert payload["records"][0]["image_id"] == "a"
        assert payload["reference_scores"] == REFERENCE_SCORES

    def test_rendered_table(self):
        rep = EvalReport(dataset="bench", method="ours",
                         records=[MetricRecord("a", 30.0, 0.9146, 2.0)])
        table = render_table([rep])
        assert "PSNR" in table and "bench" in table
        assert "30.00" in table and "0.9146" in table

    def test_score_pair_fields(self):
        x = textured(32, 32, seed=17)
        rec = score_pair("z", x, x)
        assert (rec.psnr, rec.ssim, rec.delta_e) == (PSNR_CAP_DB, 1.0, 0.0)

    def test_reference_scores_table(self):
        assert REFERENCE_SCORES["ExDark"]["psnr"] == 34.56
        assert REFERENCE_SCORES["DarkShake"]["delta_e"] == 3.75
