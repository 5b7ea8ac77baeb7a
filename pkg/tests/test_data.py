import cv2
import numpy as np
import pytest
import torch

from conftest import textured
from darkdeblur import images
from darkdeblur.blursynth import SynthConfig, make_rng
from darkdeblur.data import (AlignmentError, DatasetManifest, EmptyDatasetError,
                             PatchSpec, TrainingStream, align_pair,
                             extract_patches, iterate_pairs, load_manifest,
                             patch_grid, resolve_source, save_manifest)


class TestPatches:
    def test_spec_defaults(self):
        spec = PatchSpec()
        assert spec.size == 128 and spec.stride == 128
        assert PatchSpec(size=64, stride=32).stride == 32

    @pytest.mark.parametrize("kwargs", [{"size": 0}, {"size": -4}, {"stride": 0}])
    def test_spec_validation(self, kwargs):
        with pytest.raises(ValueError):
            PatchSpec(**{"size": 64, **kwargs})

    def test_grid_row_major(self):
        grid = patch_grid(256, 256, PatchSpec(size=128))
        assert grid == [(0, 0), (0, 128), (128, 0), (128, 128)]

    def test_grid_discards_partial(self):
        assert len(patch_grid(300, 300, PatchSpec(size=128))) == 4
        assert patch_grid(100, 300, PatchSpec(size=128)) == []

    def test_grid_overlapping_stride(self):
        assert len(patch_grid(256, 256, PatchSpec(size=128, stride=64))) == 9

    def test_extract_and_reassemble(self):
        img = textured(256, 384, seed=0)
        spec = PatchSpec(size=128)
        patches = extract_patches(img, spec)
        assert len(patches) == 6
        rebuilt = np.zeros_like(img)
        for (t, l), p in zip(patch_grid(256, 384, spec), patches):
            rebuilt[:, t:t + 128, l:l + 128] = p
        assert np.array_equal(rebuilt, img)


class TestManifest:
    def test_round_trip(self, tmp_path):
        m = DatasetManifest([("a/b.png", "a/s.png"), ("c.png", "d.png")],
                            split="val", source="unit")
        path = tmp_path / "m.tsv"
        save_manifest(path, m)
        back = load_manifest(path, split="val")
        assert back.entries == m.entries
        assert back.split == "val"

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("only_one_column\n")
        with pytest.raises(ValueError):
            load_manifest(path)

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("a.png\tb.png\n\n\nc.png\td.png\n")
        assert len(load_manifest(path).entries) == 2


class TestAlignment:
    def test_identity_pair(self):
        img = textured(240, 320, seed=1, smooth=1.0)
        blurry_c, sharp_c, res = align_pair(img, img.copy())
        assert np.abs(res.homography - np.eye(3)).max() < 1e-3
        assert res.mean_reprojection_error < 0.1
        assert not res.low_confidence
        assert res.crop_window == (0, 0, 240, 320)
        assert blurry_c.shape == sharp_c.shape == (3, 240, 320)

    def test_known_translation_recovered(self):
        img = textured(240, 320, seed=2, smooth=1.0)
        t = np.float32([[1, 0, 7], [0, 1, -4]])
        hwc = img.transpose(1, 2, 0)
        shifted = cv2.warpAffine(hwc, t, (320, 240),
                                 borderMode=cv2.BORDER_REFLECT).transpose(2, 0, 1)
        _, _, res = align_pair(img, shifted)
        # content moved by (+7, -4), so the sharp->blurry map undoes it
        assert res.homography[0, 2] == pytest.approx(-7, abs=0.1)
        assert res.homography[1, 2] == pytest.approx(4, abs=0.1)

    def test_rotation_scale_trials(self):
        hits = 0
        for trial in range(10):
            rng = make_rng(900, trial)
            img = textured(240, 320, seed=1000 + trial, smooth=1.0)
            angle = rng.uniform(-15, 15)
            scale = rng.uniform(0.9, 1.1)
            tx = rng.uniform(-16, 16)
            ty = rng.uniform(-12, 12)
            m = cv2.getRotationMatrix2D((160, 120), angle, scale)
            m[:, 2] += (tx, ty)
            hwc = img.transpose(1, 2, 0)
            warped = cv2.warpAffine(hwc, m, (320, 240),
                                    borderMode=cv2.BORDER_REFLECT).transpose(2, 0, 1)
            try:
                _, _, res = align_pair(img, warped)
            except AlignmentError:
                continue
            # ground-truth map sharp->blurry inverts the applied warp
            gt = np.linalg.inv(np.vstack([m, [0, 0, 1]]))
            pts = np.float32([[40, 40], [280, 40], [280, 200], [40, 200]])
            ones = np.hstack([pts, np.ones((4, 1), np.float32)])
            proj_gt = (gt @ ones.T).T
            proj_gt = proj_gt[:, :2] / proj_gt[:, 2:]
            proj = cv2.perspectiveTransform(
                pts.reshape(-1, 1, 2), res.homography).reshape(4, 2)
            if np.linalg.norm(proj - proj_gt, axis=1).mean() < 1.0:
                hits += 1
        assert hits >= 9

    def test_featureless_pair_raises(self):
        flat = np.full((3, 64, 64), 0.5, dtype=np.float32)
        with pytest.raises(AlignmentError):
            align_pair(flat, flat.copy())

    def test_crop_excludes_missing_coverage(self):
        # sharp shifted right by 20px leaves the blurry frame's right edge
        # without sharp coverage; the crop must drop it
        img = textured(240, 320, seed=3, smooth=1.0)
        t = np.float32([[1, 0, 20], [0, 1, 0]])
        hwc = img.transpose(1, 2, 0)
        shifted = cv2.warpAffine(hwc, t, (320, 240),
                                 borderMode=cv2.BORDER_REFLECT).transpose(2, 0, 1)
        blurry_c, sharp_c, res = align_pair(img, shifted)
        top, left, height, width = res.crop_window
        assert left + width <= 301
        assert blurry_c.shape == sharp_c.shape == (3, height, width)


def write_sharp_tree(root, count=2, size=(256, 256)):
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        p = root / f"img{i:02d}.png"
        images.save_image(p, textured(size[0], size[1], seed=50 + i))
        paths.append(p)
    return paths


def write_pair_tree(root, count=2, size=(256, 256)):
    for i in range(count):
        sharp = textured(size[0], size[1], seed=70 + i)
        blurry = np.clip(sharp + 0.05, 0, 1)
        images.save_image(root / "blur" / f"img{i:02d}.png", blurry)
        images.save_image(root / "sharp" / f"img{i:02d}.png", sharp)
    return root


class TestResolveSource:
    def test_sharp_directory(self, tmp_path):
        paths = write_sharp_tree(tmp_path / "sharp_only")
        kind, payload = resolve_source(tmp_path / "sharp_only")
        assert kind == "synth"
        assert payload == paths

    def test_pair_tree(self, tmp_path):
        write_pair_tree(tmp_path)
        kind, manifest = resolve_source(tmp_path)
        assert kind == "pairs"
        assert len(manifest.entries) == 2
        assert all(b.name == s.name for b, s in manifest.entries)

    def test_manifest_file(self, tmp_path):
        write_pair_tree(tmp_path)
        m_path = tmp_path / "pairs.tsv"
        save_manifest(m_path, resolve_source(tmp_path)[1])
        kind, manifest = resolve_source(m_path)
        assert kind == "pairs"
        assert len(manifest.entries) == 2

    def test_missing_path(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            resolve_source(tmp_path / "nope")


class TestTrainingStream:
    def test_synth_stream_shapes(self, tmp_path):
        write_sharp_tree(tmp_path / "s", count=2)
        stream = TrainingStream(tmp_path / "s", synth_cfg=SynthConfig(canvas_size=15),
                                seed=0, batch_size=3)
        assert stream.num_patches == 8
        assert stream.batches_per_epoch == 3
        it = stream.batches()
        blurry, sharp = next(it)
        assert blurry.shape == sharp.shape == (3, 3, 128, 128)
        assert blurry.dtype == torch.float32
        assert 0.0 <= float(blurry.min()) and float(blurry.max()) <= 1.0
        assert not torch.equal(blurry, sharp)

    def test_final_partial_batch_kept(self, tmp_path):
        # 320x448 at 64px patches = 35 slots; batch 16 -> 16, 16, 3
        (tmp_path / "s").mkdir()
        images.save_image(tmp_path / "s" / "big.png", textured(320, 448, seed=90))
        stream = TrainingStream(tmp_path / "s", spec=PatchSpec(size=64),
                                synth_cfg=SynthConfig(canvas_size=15),
                                seed=0, batch_size=16)
        assert stream.num_patches == 35
        it = stream.batches()
        sizes = [next(it)[0].shape[0] for _ in range(4)]
        assert sizes == [16, 16, 3, 16]

    def test_deterministic(self, tmp_path):
        write_sharp_tree(tmp_path / "s", count=2)
        mk = lambda: TrainingStream(tmp_path / "s",
                                    synth_cfg=SynthConfig(canvas_size=15),
                                    seed=4, batch_size=4).batches()
        a, b = mk(), mk()
        for _ in range(4):
            xa, ya = next(a)
            xb, yb = next(b)
            assert torch.equal(xa, xb) and torch.equal(ya, yb)

    def test_epochs_differ(self, tmp_path):
        write_sharp_tree(tmp_path / "s", count=2)
        stream = TrainingStream(tmp_path / "s", synth_cfg=SynthConfig(canvas_size=15),
                                seed=0, batch_size=8)
        assert not np.array_equal(stream.epoch_order(0), stream.epoch_order(1))

    def test_resume_reconstructs_mid_stream(self, tmp_path):
        write_sharp_tree(tmp_path / "s", count=2)
        mk = lambda start: TrainingStream(
            tmp_path / "s", synth_cfg=SynthConfig(canvas_size=15),
            seed=7, batch_size=3).batches(start_step=start)
        fresh = mk(0)
        batches = [next(fresh) for _ in range(7)]
        resumed = mk(4)  # resumes inside epoch 1 (3 batches per epoch)
        for step in range(4, 7):
            xa, ya = batches[step]
            xb, yb = next(resumed)
            assert torch.equal(xa, xb) and torch.equal(ya, yb)

    def test_pair_stream_loads_from_disk(self, tmp_path):
        write_pair_tree(tmp_path, count=2)
        stream = TrainingStream(tmp_path, seed=0, batch_size=4)
        assert stream.kind == "pairs"
        blurry, sharp = next(stream.batches())
        assert blurry.shape == (4, 3, 128, 128)
        diff = (blurry - sharp).abs().mean()
        assert 0.03 < float(diff) < 0.07  # pairs were built 0.05 apart

    def test_synth_source_requires_config(self, tmp_path):
        write_sharp_tree(tmp_path / "s", count=1)
        with pytest.raises(ValueError):
            TrainingStream(tmp_path / "s")

    def test_empty_source_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(EmptyDatasetError):
            TrainingStream(tmp_path / "empty", synth_cfg=SynthConfig())

    def test_all_images_too_small_rejected(self, tmp_path):
        (tmp_path / "s").mkdir()
        images.save_image(tmp_path / "s" / "tiny.png", textured(32, 32, seed=0))
        with pytest.raises(EmptyDatasetError):
            TrainingStream(tmp_path / "s", synth_cfg=SynthConfig(canvas_size=15))

    def test_unreadable_file_skipped(self, tmp_path):
        write_sharp_tree(tmp_path / "s", count=1)
        (tmp_path / "s" / "junk.png").write_text("not an image")
        stream = TrainingStream(tmp_path / "s", synth_cfg=SynthConfig(canvas_size=15))
        assert stream.num_images == 1


class TestIteratePairs:
    def test_yields_named_pairs(self, tmp_path):
        write_pair_tree(tmp_path, count=2)
        got = list(iterate_pairs(tmp_path))
        assert [name for name, _, _ in got] == ["img00", "img01"]
        for _, blurry, sharp in got:
            assert blurry.shape == sharp.shape == (3, 256, 256)

    def test_sharp_only_source_rejected(self, tmp_path):
        write_sharp_tree(tmp_path / "s", count=1)
        with pytest.raises(ValueError):
            list(iterate_pairs(tmp_path / "s"))
