"""Tests for the procedural disk-recoloring dataset."""

import json
import math

import numpy as np
import pytest
import torch

from disruptkit.data import (
    CLASS_PALETTE,
    DatasetConfig,
    dataset_split,
    dump_dataset,
    generate_sample,
)

CFG = DatasetConfig(n_samples=30, image_size=16, seed=0)


class TestGeneration:
    def test_deterministic_bitwise(self):
        a = generate_sample(CFG, 3)
        b = generate_sample(CFG, 3)
        assert torch.equal(a.x, b.x)
        assert all(torch.equal(ta, tb) for ta, tb in zip(a.targets, b.targets))

    def test_different_indices_differ(self):
        assert not torch.equal(generate_sample(CFG, 0).x,
                               generate_sample(CFG, 3).x)

    def test_seed_changes_data(self):
        other = DatasetConfig(n_samples=30, image_size=16, seed=1)
        assert not torch.equal(generate_sample(CFG, 0).x,
                               generate_sample(other, 0).x)

    def test_same_class_target_is_input(self):
        s = generate_sample(CFG, 4)
        assert torch.equal(s.targets[s.source_class], s.x)

    def test_class_balance(self):
        classes = [generate_sample(CFG, i).source_class for i in range(30)]
        assert classes.count(0) == classes.count(1) == classes.count(2) == 10

    def test_range_and_shape(self):
        s = generate_sample(CFG, 7)
        assert s.x.shape == (3, 16, 16)
        assert s.x.dtype == torch.float64
        assert s.x.min() >= -1.0 and s.x.max() <= 1.0

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            generate_sample(CFG, 30)
        with pytest.raises(IndexError):
            generate_sample(CFG, -1)

    def test_disk_matches_analytic_mask(self):
        # recompute membership per pixel from the stored center/radius and
        # check the noise-free signal underneath
        s = generate_sample(CFG, 5)
        palette = CLASS_PALETTE[s.source_class]
        noise_amp = CFG.noise_amplitude
        for y in range(16):
            for x in range(16):
                inside = (y - s.center[0]) ** 2 + (x - s.center[1]) ** 2 <= s.radius**2
                for ch in range(3):
                    base = palette[ch] if inside else s.background
                    val = s.x[ch, y, x].item()
                    lo = max(base - noise_amp, -1.0)
                    hi = min(base + noise_amp, 1.0)
                    assert lo - 1e-12 <= val <= hi + 1e-12

    def test_targets_only_recolor_the_disk(self):
        s = generate_sample(CFG, 8)
        for t in s.targets:
            diff = (t - s.x).abs().sum(dim=0)
            for y in range(16):
                for x in range(16):
                    inside = ((y - s.center[0]) ** 2 +
                              (x - s.center[1]) ** 2) <= s.radius**2
                    if not inside:
                        assert diff[y, x].item() == 0.0

    def test_disk_fully_inside_frame(self):
        for i in range(10):
            s = generate_sample(CFG, i)
            cy, cx = s.center
            assert s.radius <= cy <= 16 - s.radius
            assert s.radius <= cx <= 16 - s.radius
            assert 16 * 0.15 <= s.radius <= 16 * 0.3


class TestConfigValidation:
    def test_too_few_classes(self):
        with pytest.raises(ValueError):
            DatasetConfig(num_classes=1)

    def test_too_many_classes(self):
        with pytest.raises(ValueError):
            DatasetConfig(num_classes=len(CLASS_PALETTE) + 1)

    def test_too_small_image(self):
        with pytest.raises(ValueError):
            DatasetConfig(image_size=6)

    def test_bad_radius_range(self):
        with pytest.raises(ValueError):
            DatasetConfig(radius_min=0.3, radius_max=0.2)
        with pytest.raises(ValueError):
            DatasetConfig(radius_max=0.6)

    def test_radius_range_respected(self):
        cfg = DatasetConfig(n_samples=12, image_size=16,
                            radius_min=0.3, radius_max=0.45)
        for i in range(12):
            s = generate_sample(cfg, i)
            assert 16 * 0.3 <= s.radius <= 16 * 0.45


class TestSplit:
    def test_disjoint_and_sized(self):
        train, test = dataset_split(CFG, test_size=10)
        assert len(test) == 10 and len(train) == 20
        assert not set(train) & set(test)
        assert set(train) | set(test) == set(range(30))

    def test_deterministic(self):
        assert dataset_split(CFG, 10) == dataset_split(CFG, 10)

    def test_too_small_dataset(self):
        with pytest.raises(ValueError):
            dataset_split(CFG, test_size=25)


class TestDump:
    def test_dump_writes_pngs_and_sidecars(self, tmp_path):
        cfg = DatasetConfig(n_samples=3, image_size=16)
        dump_dataset(cfg, tmp_path)
        assert (tmp_path / "sample_0000.png").exists()
        assert (tmp_path / "sample_0002_target2.png").exists()
        sidecar = json.loads((tmp_path / "sample_0001.json").read_text())
        assert sidecar["index"] == 1
        assert sidecar["source_class"] == 1
        assert sidecar["radius"] == pytest.approx(
            generate_sample(cfg, 1).radius)
