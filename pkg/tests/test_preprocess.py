import numpy as np
import pytest

from etchloop.preprocess import (
    Mirror,
    extract_eval_patches,
    extract_training_tiles,
    highpass,
    list_mirror_ids,
    load_mirror,
    normalize,
    read_depth,
    read_mask_png,
    read_pfm,
    write_depth_tiff,
    write_mask_png,
    write_mirror,
    write_pfm,
)

from oracles import gaussian_blur_dense


class TestHighpass:
    def test_constant_map_zeroed(self):
        depth = np.full((40, 40), 7.5)
        out = highpass(depth, sigma_gauss=4.0)
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_groove_on_plane_preserved(self, rng):
        rr, cc = np.mgrid[0:64, 0:64]
        plane = 0.01 * rr + 0.02 * cc
        depth = plane.astype(float)
        depth[30:33, 8:56] -= 2.0
        out = highpass(depth, sigma_gauss=8.0)
        interior = out[10:54, 10:54]
        groove = out[31, 10:54]
        assert groove.min() < -1.0           # groove dip survives
        flat = np.delete(interior, slice(20, 23), axis=0)
        assert np.abs(flat).max() < 0.5      # plane tilt mostly gone

    def test_matches_dense_oracle(self, rng):
        depth = rng.normal(0.0, 1.0, size=(48, 48))
        sigma = 3.0
        out = highpass(depth, sigma_gauss=sigma)
        mean, std = depth.mean(), depth.std()
        clamped = np.clip(depth, mean - 3 * std, mean + 3 * std)
        expected = depth - gaussian_blur_dense(clamped, sigma)
        np.testing.assert_allclose(out, expected, atol=1e-8)

    def test_outlier_capped(self, rng):
        depth = rng.normal(0.0, 0.05, size=(48, 48))
        depth[24, 24] = 500.0
        capped = highpass(depth, sigma_gauss=4.0)
        # rerun with the spike neutralized: away from the spike the
        # baselines must agree, i.e. the spike's influence was bounded
        tame = depth.copy()
        tame[24, 24] = 0.0
        reference = highpass(tame, sigma_gauss=4.0)
        far = np.abs(capped[:10] - reference[:10]).max()
        assert far < 0.05

    def test_foreground_statistics(self, rng):
        depth = rng.normal(0.0, 0.1, size=(32, 32))
        depth[:, 16:] = 1000.0  # extreme background half
        fg = np.zeros((32, 32), dtype=bool)
        fg[:, :16] = True
        out_fg = highpass(depth, sigma_gauss=4.0, foreground=fg)
        out_all = highpass(depth, sigma_gauss=4.0)
        assert not np.allclose(out_fg, out_all)

    def test_nonfinite_rejected(self):
        depth = np.zeros((8, 8))
        depth[2, 2] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            highpass(depth, sigma_gauss=2.0)

    def test_near_idempotent_on_detail_content(self):
        # content far above the cutoff passes straight through, so a
        # second application changes almost nothing
        rr, cc = np.mgrid[0:64, 0:64]
        depth = np.sin(rr * (2 * np.pi / 8.0)) * 0.3 + np.cos(cc * (2 * np.pi / 6.0)) * 0.2
        once = highpass(depth, sigma_gauss=8.0)
        twice = highpass(once, sigma_gauss=8.0)
        assert np.abs(twice - once).max() < 0.02


class TestNormalize:
    def test_two_point_standardization(self):
        depth = np.zeros((4, 4))
        depth[0, 0] = 2.0
        fg = np.zeros((4, 4), dtype=bool)
        fg[0, 0] = fg[0, 1] = True  # values {2, 0}
        out = normalize(depth, fg)
        assert out[0, 0] == pytest.approx(1.0)
        assert out[0, 1] == pytest.approx(-1.0)

    def test_foreground_moments(self, rng):
        depth = rng.normal(5.0, 3.0, size=(32, 32))
        fg = rng.random((32, 32)) < 0.6
        fg[0, 0] = fg[0, 1] = True
        out = normalize(depth, fg)
        assert out[fg].mean() == pytest.approx(0.0, abs=1e-6)
        assert out[fg].std() == pytest.approx(1.0, abs=1e-6)

    def test_background_ignored_by_statistics(self, rng):
        depth = rng.normal(0.0, 1.0, size=(16, 16))
        fg = np.zeros((16, 16), dtype=bool)
        fg[4:12, 4:12] = True
        wild = depth.copy()
        wild[~fg] = 1e6
        np.testing.assert_allclose(normalize(depth, fg)[fg], normalize(wild, fg)[fg])

    def test_affine_invariance(self, rng):
        depth = rng.normal(2.0, 1.5, size=(20, 20))
        fg = rng.random((20, 20)) < 0.7
        fg[0, :2] = True
        a = normalize(depth, fg)
        b = normalize(3.0 * depth - 11.0, fg)
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_empty_foreground(self):
        with pytest.raises(ValueError, match="empty"):
            normalize(np.zeros((4, 4)), np.zeros((4, 4), dtype=bool))

    def test_zero_variance(self):
        fg = np.ones((4, 4), dtype=bool)
        with pytest.raises(ValueError, match="variance"):
            normalize(np.ones((4, 4)), fg)


class TestEvalPatches:
    def test_exact_grid(self):
        fg = np.ones((1024, 1024), dtype=bool)
        grid = extract_eval_patches((1024, 1024), fg)
        assert len(grid) == 4
        assert all(grid.keep)

    def test_mirror_scale_grid(self):
        fg = np.ones((8964, 6716), dtype=bool)
        grid = extract_eval_patches((8964, 6716), fg)
        assert len(grid) == 18 * 14

    def test_background_patches_dropped(self):
        fg = np.zeros((1024, 1024), dtype=bool)
        grid = extract_eval_patches((1024, 1024), fg)
        assert not any(grid.keep)

    def test_keep_tracks_foreground(self):
        fg = np.zeros((1024, 1024), dtype=bool)
        fg[100, 100] = True
        grid = extract_eval_patches((1024, 1024), fg)
        assert grid.keep == [True, False, False, False]

    def test_stitch_round_trip(self, rng):
        image = (rng.random((700, 900)) * 100).astype(np.float64)
        fg = np.ones(image.shape, dtype=bool)
        grid = extract_eval_patches(image.shape, fg, patch_size=512)
        patches = [grid.crop(image, k) for k in range(len(grid))]
        assert (grid.stitch(patches) == image).all()

    def test_padding_is_zero(self, rng):
        image = rng.random((600, 600))
        fg = np.ones(image.shape, dtype=bool)
        grid = extract_eval_patches(image.shape, fg, patch_size=512)
        edge = grid.crop(image, len(grid) - 1)
        vh, vw = grid.valid_extent(len(grid) - 1)
        assert (vh, vw) == (88, 88)
        assert (edge[vh:] == 0).all() and (edge[:, vw:] == 0).all()
        assert grid.valid_mask(len(grid) - 1).sum() == vh * vw

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="smaller"):
            extract_eval_patches((100, 600), np.ones((100, 600), dtype=bool))


class TestTrainingTiles:
    def test_native_scan_resolution(self):
        plan = extract_training_tiles((8964, 6716))
        assert len(plan) == 25
        assert plan.padding == (0, 4)
        assert plan.stride == (1494, 1120)

    def test_origins_within_padded_bounds(self):
        plan = extract_training_tiles((8964, 6716))
        th, tw = plan.tile_size
        for r, c in plan.origins:
            assert 0 <= r and r + th <= 8964 + plan.padding[0]
            assert 0 <= c and c + tw <= 6716 + plan.padding[1]

    def test_five_by_five(self):
        plan = extract_training_tiles((8964, 6716))
        rows = sorted({r for r, _ in plan.origins})
        cols = sorted({c for _, c in plan.origins})
        assert len(rows) == 5 and len(cols) == 5

    def test_too_small(self):
        with pytest.raises(ValueError, match="smaller"):
            extract_training_tiles((2000, 2000))


class TestFileFormats:
    def test_pfm_round_trip(self, rng, tmp_path):
        depth = rng.normal(0, 1, size=(37, 53)).astype(np.float32).astype(np.float64)
        path = tmp_path / "d.pfm"
        write_pfm(path, depth)
        np.testing.assert_array_equal(read_pfm(path), depth)

    def test_pfm_row_order_bottom_up(self, tmp_path):
        depth = np.zeros((4, 3))
        depth[0, 0] = 9.0  # top-left of the logical image
        path = tmp_path / "d.pfm"
        write_pfm(path, depth)
        raw = path.read_bytes()
        payload = raw.split(b"\n", 3)[3]
        first_stored = np.frombuffer(payload, dtype="<f4", count=3)
        assert (first_stored == 0).all()  # bottom row is stored first
        assert read_pfm(path)[0, 0] == 9.0

    def test_tiff_round_trip(self, rng, tmp_path):
        depth = rng.normal(0, 1, size=(20, 30)).astype(np.float32).astype(np.float64)
        path = tmp_path / "d.tif"
        write_depth_tiff(path, depth)
        np.testing.assert_allclose(read_depth(path), depth, atol=1e-6)

    def test_mask_round_trip(self, rng, tmp_path):
        mask = rng.random((25, 40)) < 0.4
        path = tmp_path / "m.png"
        write_mask_png(path, mask)
        assert (read_mask_png(path) == mask).all()

    def test_any_nonzero_reads_foreground(self, tmp_path):
        from PIL import Image

        gray = np.zeros((6, 6), dtype=np.uint8)
        gray[2, 2] = 1
        gray[3, 3] = 200
        path = tmp_path / "m.png"
        Image.fromarray(gray, mode="L").save(path)
        mask = read_mask_png(path)
        assert mask[2, 2] and mask[3, 3] and mask.sum() == 2

    def test_not_a_pfm(self, tmp_path):
        path = tmp_path / "bogus.pfm"
        path.write_bytes(b"P6\n1 1\n255\nxxx")
        with pytest.raises(ValueError, match="not a PFM"):
            read_pfm(path)


class TestDatasetLayout:
    def make_mirror(self, rng, mirror_id="m01"):
        depth = rng.normal(0, 1, size=(64, 48)).astype(np.float32).astype(np.float64)
        gt = rng.random((64, 48)) < 0.2
        return Mirror(
            mirror_id=mirror_id,
            depth=depth,
            gt=gt,
            foreground=np.ones((64, 48), dtype=bool),
            pred_init=gt & (rng.random((64, 48)) < 0.8),
        )

    def test_write_load_round_trip(self, rng, tmp_path):
        mirror = self.make_mirror(rng)
        write_mirror(tmp_path, mirror)
        loaded = load_mirror(tmp_path, "m01")
        np.testing.assert_array_equal(loaded.depth, mirror.depth)
        assert (loaded.gt == mirror.gt).all()
        assert (loaded.pred_init == mirror.pred_init).all()
        assert (loaded.foreground == mirror.foreground).all()

    def test_listing_sorted(self, rng, tmp_path):
        for mid in ("b2", "a1", "c3"):
            write_mirror(tmp_path, self.make_mirror(rng, mid))
        (tmp_path / "not_a_mirror").mkdir()
        assert list_mirror_ids(tmp_path) == ["a1", "b2", "c3"]

    def test_missing_gt_rejected_when_required(self, rng, tmp_path):
        mirror = self.make_mirror(rng)
        mirror.gt = None
        mirror.pred_init = None
        write_mirror(tmp_path, mirror)
        with pytest.raises(FileNotFoundError, match="gt.png"):
            load_mirror(tmp_path, "m01")
        loaded = load_mirror(tmp_path, "m01", require_gt=False)
        assert loaded.gt is None and loaded.pred_init is None

    def test_shape_mismatch_rejected(self, rng, tmp_path):
        mirror = self.make_mirror(rng)
        write_mirror(tmp_path, mirror)
        write_mask_png(tmp_path / "m01" / "gt.png", np.zeros((10, 10), dtype=bool))
        with pytest.raises(ValueError, match="shape"):
            load_mirror(tmp_path, "m01")
