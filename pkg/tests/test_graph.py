"""Segmentation, adjacency, per-superpixel features and similarity kernels."""

import numpy as np
import pytest
import scipy.ndimage

from depthcrf import graph
from depthcrf.graph import GraphConfig, SceneSample


def flat_scene(height=12, width=12, color=(0.4, 0.6, 0.2), depth=2.0):
    image = np.broadcast_to(np.asarray(color), (height, width, 3)).copy()
    return SceneSample(image=image, depth=np.full((height, width), depth))


def brute_force_adjacency(labels):
    found = set()
    h, w = labels.shape
    for r in range(h):
        for c in range(w):
            for rr, cc in ((r + 1, c), (r, c + 1)):
                if rr < h and cc < w and labels[r, c] != labels[rr, cc]:
                    found.add((min(labels[r, c], labels[rr, cc]),
                               max(labels[r, c], labels[rr, cc])))
    return sorted(found)


class TestSceneSample:
    def test_rejects_out_of_range_image(self):
        with pytest.raises(ValueError):
            SceneSample(image=np.full((4, 4, 3), 1.5))

    def test_rejects_nonpositive_depth(self):
        with pytest.raises(ValueError):
            SceneSample(image=np.zeros((4, 4, 3)), depth=np.zeros((4, 4)))

    def test_rejects_gappy_labels(self):
        labels = np.zeros((4, 4), dtype=int)
        labels[2:, :] = 2
        with pytest.raises(ValueError):
            SceneSample(image=np.zeros((4, 4, 3)), labels=labels)


class TestGridSegmentation:
    def test_four_blocks_on_ten_by_ten(self):
        image = np.zeros((10, 10, 3))
        labels, centroids = graph.segment(image, 4, mode="grid")
        expected = np.zeros((10, 10), dtype=int)
        expected[:5, 5:] = 1
        expected[5:, :5] = 2
        expected[5:, 5:] = 3
        assert np.array_equal(labels, expected)
        assert np.allclose(centroids, [[2, 2], [2, 7], [7, 2], [7, 7]])

    def test_labels_are_contiguous_ids(self):
        labels, _ = graph.segment(np.zeros((13, 17, 3)), 7, mode="grid")
        ids = np.unique(labels)
        assert np.array_equal(ids, np.arange(ids.size))

    def test_rejects_bad_target(self):
        with pytest.raises(ValueError):
            graph.segment(np.zeros((4, 4, 3)), 17, mode="grid")
        with pytest.raises(ValueError):
            graph.segment(np.zeros((4, 4, 3)), 0, mode="grid")

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            graph.segment(np.zeros((4, 4, 3)), 2, mode="watershed")


class TestSlicSegmentation:
    def test_deterministic(self):
        rng = np.random.default_rng(0)
        image = rng.random((40, 40, 3))
        first, _ = graph.segment(image, 16)
        second, _ = graph.segment(image, 16)
        assert np.array_equal(first, second)

    def test_count_near_target(self):
        rng = np.random.default_rng(1)
        image = np.clip(rng.normal(0.5, 0.15, (64, 64, 3)), 0, 1)
        labels, centroids = graph.segment(image, 36)
        count = labels.max() + 1
        assert 0.8 * 36 <= count <= 1.2 * 36
        assert centroids.shape == (count, 2)

    def test_superpixels_are_connected(self):
        rng = np.random.default_rng(2)
        image = np.clip(rng.normal(0.5, 0.2, (48, 48, 3)), 0, 1)
        labels, _ = graph.segment(image, 25)
        for i in range(labels.max() + 1):
            _, pieces = scipy.ndimage.label(labels == i, structure=graph.FOUR_CONNECTED)
            assert pieces == 1

    def test_two_tone_boundary_respected(self):
        image = np.full((60, 60, 3), 0.05)
        image[:, 30:] = 0.95
        labels, _ = graph.segment(image, 36, compactness=0.2)
        for i in range(labels.max() + 1):
            cols = np.nonzero(labels == i)[1]
            # entirely on one side of the tone edge, up to a 1-px wiggle
            assert cols.max() <= 30 or cols.min() >= 29


class TestAdjacency:
    def test_grid_two_by_two(self):
        labels, _ = graph.segment(np.zeros((10, 10, 3)), 4, mode="grid")
        edges = graph.adjacency(labels)
        assert edges.tolist() == [[0, 1], [0, 2], [1, 3], [2, 3]]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        image = np.clip(rng.normal(0.5, 0.2, (32, 32, 3)), 0, 1)
        labels, _ = graph.segment(image, 12)
        assert graph.adjacency(labels).tolist() == [
            list(e) for e in brute_force_adjacency(labels)
        ]

    def test_single_superpixel_has_no_edges(self):
        labels = np.zeros((6, 6), dtype=int)
        assert graph.adjacency(labels).shape == (0, 2)


class TestLbp:
    def test_uniform_image_single_code(self):
        codes = graph.lbp_codes(np.full((8, 8, 3), 0.37))
        assert np.all(codes == 255)

    def test_hand_computed_center_code(self):
        gray = np.arange(0.1, 1.0, 0.1).reshape(3, 3)
        image = np.repeat(gray[:, :, None], 3, axis=2)
        codes = graph.lbp_codes(image)
        # center 0.5; only the four neighbors 0.6, 0.9, 0.8, 0.7 are >=
        assert codes[1, 1] == 8 + 16 + 32 + 64

    def test_corner_uses_edge_replication(self):
        gray = np.arange(0.1, 1.0, 0.1).reshape(3, 3)
        image = np.repeat(gray[:, :, None], 3, axis=2)
        # all replicated/real neighbors of the corner are >= its value
        assert graph.lbp_codes(image)[0, 0] == 255


class TestFeatures:
    def test_requires_segmentation(self):
        with pytest.raises(ValueError):
            graph.extract_features(flat_scene(), box_size=4, patch_dim=2)

    def test_constant_scene_features(self):
        sample = flat_scene(depth=3.0)
        labels, centroids = graph.segment(sample.image, 4, mode="grid")
        sample.labels, sample.centroids = labels, centroids
        feats = graph.extract_features(sample, box_size=4, patch_dim=2)
        assert np.allclose(feats.mean_color, [0.4, 0.6, 0.2])
        assert np.allclose(feats.color_hist.sum(axis=1), 1.0)
        assert np.allclose(feats.lbp_hist.sum(axis=1), 1.0)
        # uniform image: all LBP mass on one bin
        assert np.allclose(feats.lbp_hist[:, 255], 1.0)
        assert np.allclose(feats.patch, np.tile([0.4, 0.6, 0.2], 4))
        assert np.allclose(feats.gt_logdepth, np.log(3.0))

    def test_color_histogram_hand_count(self):
        image = np.zeros((2, 2, 3))
        image[..., 0] = [[0.0, 0.05], [0.95, 1.0]]
        image[..., 1] = 0.55
        sample = SceneSample(
            image=image,
            labels=np.zeros((2, 2), dtype=int),
            centroids=np.array([[0.5, 0.5]]),
        )
        feats = graph.extract_features(sample, box_size=2, patch_dim=1)
        hist = feats.color_hist[0]
        red, green, blue = hist[:10], hist[10:20], hist[20:30]
        assert np.allclose(red, np.r_[2, 0, 0, 0, 0, 0, 0, 0, 0, 2] / 12)
        assert np.allclose(green, np.r_[0, 0, 0, 0, 0, 4, 0, 0, 0, 0] / 12)
        assert np.allclose(blue, np.r_[4, 0, 0, 0, 0, 0, 0, 0, 0, 0] / 12)
        assert abs(hist.sum() - 1.0) < 1e-9

    def test_patch_area_average_with_fractional_overlap(self):
        weights = graph._area_average_weights(3, 2)
        assert np.allclose(weights, [[2 / 3, 1 / 3, 0], [0, 1 / 3, 2 / 3]])
        assert np.allclose(weights.sum(axis=1), 1.0)

    def test_patch_block_average(self):
        image = np.zeros((4, 4, 3))
        image[..., 0] = np.arange(16).reshape(4, 4) / 16.0
        sample = SceneSample(
            image=image,
            labels=np.zeros((4, 4), dtype=int),
            centroids=np.array([[1.5, 1.5]]),
        )
        feats = graph.extract_features(sample, box_size=4, patch_dim=2)
        patch = feats.patch[0].reshape(2, 2, 3)
        blocks = image[..., 0].reshape(2, 2, 2, 2).mean(axis=(1, 3))
        assert np.allclose(patch[..., 0], blocks)

    def test_patch_replicates_at_borders(self):
        image = np.zeros((6, 6, 3))
        image[..., 2] = np.linspace(0, 1, 36).reshape(6, 6)
        sample = SceneSample(
            image=image,
            labels=np.zeros((6, 6), dtype=int),
            centroids=np.array([[0.0, 0.0]]),
        )
        feats = graph.extract_features(sample, box_size=4, patch_dim=4)
        patch = feats.patch[0].reshape(4, 4, 3)
        rows = np.clip(np.arange(-2, 2), 0, 5)
        expected = image[np.ix_(rows, rows)][..., 2]
        assert np.allclose(patch[..., 2], expected)

    def test_centroid_depth_option(self):
        sample = flat_scene(height=8, width=8)
        sample.depth = np.linspace(1.0, 3.0, 64).reshape(8, 8)
        labels, centroids = graph.segment(sample.image, 1, mode="grid")
        sample.labels, sample.centroids = labels, centroids
        mean_route = graph.extract_features(sample, 4, 2)
        center_route = graph.extract_features(sample, 4, 2, use_centroid_depth=True)
        assert np.allclose(mean_route.gt_logdepth, np.log(sample.depth.mean()))
        center = sample.depth[4, 4]  # centroid (3.5, 3.5) rounds to pixel (4, 4)
        assert np.allclose(center_route.gt_logdepth, np.log(center))

    def test_missing_depth_gives_no_targets(self):
        sample = flat_scene()
        sample.depth = None
        labels, centroids = graph.segment(sample.image, 4, mode="grid")
        sample.labels, sample.centroids = labels, centroids
        feats = graph.extract_features(sample, 4, 2)
        assert feats.gt_logdepth is None


class TestSimilarities:
    def build(self, seed=0):
        rng = np.random.default_rng(seed)
        image = np.clip(rng.normal(0.5, 0.2, (24, 24, 3)), 0, 1)
        sample = SceneSample(image=image, depth=np.full((24, 24), 2.0))
        labels, centroids = graph.segment(image, 9, mode="grid")
        sample.labels, sample.centroids = labels, centroids
        feats = graph.extract_features(sample, 6, 3)
        edges = graph.adjacency(labels)
        return feats, edges, labels.max() + 1

    def test_structure(self):
        feats, edges, count = self.build()
        sims = graph.similarities(feats, (2.0, 2.0, 2.0), edges, count)
        assert sims.shape == (3, count, count)
        assert np.array_equal(sims, sims.transpose(0, 2, 1))
        assert np.all(sims >= 0) and np.all(sims <= 1)
        assert np.all(sims[:, np.arange(count), np.arange(count)] == 0)
        mask = np.zeros((count, count), dtype=bool)
        mask[edges[:, 0], edges[:, 1]] = mask[edges[:, 1], edges[:, 0]] = True
        assert np.all(sims[:, ~mask] == 0)
        assert np.all(sims[:, mask] > 0)

    def test_identical_features_give_unit_similarity(self):
        sample = flat_scene()
        labels, centroids = graph.segment(sample.image, 4, mode="grid")
        sample.labels, sample.centroids = labels, centroids
        feats = graph.extract_features(sample, 4, 2)
        edges = graph.adjacency(labels)
        sims = graph.similarities(feats, (2.0, 2.0, 2.0), edges, 4)
        assert np.allclose(sims[:, edges[:, 0], edges[:, 1]], 1.0)

    def test_kernel_value_matches_distance(self):
        feats, edges, count = self.build(seed=5)
        gamma = 1.7
        sims = graph.similarities(feats, (gamma, gamma, gamma), edges, count)
        p, q = edges[0]
        expected = np.exp(-gamma * np.linalg.norm(feats.mean_color[p] - feats.mean_color[q]))
        assert abs(sims[0, p, q] - expected) < 1e-12

    def test_rejects_bad_gammas(self):
        feats, edges, count = self.build()
        with pytest.raises(ValueError):
            graph.similarities(feats, (1.0, -1.0, 1.0), edges, count)


class TestBuildGraph:
    def test_shapes_line_up(self):
        rng = np.random.default_rng(7)
        image = np.clip(rng.normal(0.5, 0.2, (32, 32, 3)), 0, 1)
        sample = SceneSample(image=image, depth=np.full((32, 32), 2.5))
        cfg = GraphConfig(target_superpixels=12, box_size=8, patch_dim=4)
        data = graph.build_graph(sample, cfg)
        count = data.labels.max() + 1
        assert data.centroids.shape == (count, 2)
        assert data.features.patch.shape == (count, 4 * 4 * 3)
        assert data.features.gt_logdepth.shape == (count,)
        assert data.similarities.shape == (3, count, count)
        assert np.all(data.edges < count)

    def test_periodic_shift_permutes_features(self):
        rng = np.random.default_rng(9)
        tile_img = rng.random((3, 3, 3))
        tile_depth = rng.uniform(1.0, 5.0, (3, 3))
        image = np.tile(tile_img, (5, 5, 1))
        depth = np.tile(tile_depth, (5, 5))
        rolled_img = np.roll(image, (3, 3), axis=(0, 1))
        rolled_depth = np.roll(depth, (3, 3), axis=(0, 1))

        def features_of(img, dep):
            sample = SceneSample(image=img, depth=dep)
            labels, centroids = graph.segment(img, 25, mode="grid")
            sample.labels, sample.centroids = labels, centroids
            return graph.extract_features(sample, box_size=3, patch_dim=3)

        base = features_of(image, depth)
        moved = features_of(rolled_img, rolled_depth)
        # content of interior cell (i, j) lands in cell (i+1, j+1); compare
        # cells whose 1-px halo stays interior in both rasters
        for i in (1, 2):
            for j in (1, 2):
                src, dst = i * 5 + j, (i + 1) * 5 + (j + 1)
                for name in ("mean_color", "color_hist", "lbp_hist", "patch"):
                    a = getattr(base, name)[src]
                    b = getattr(moved, name)[dst]
                    assert np.allclose(a, b, atol=1e-12), name
                assert abs(base.gt_logdepth[src] - moved.gt_logdepth[dst]) < 1e-12
