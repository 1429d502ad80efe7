"""
Unit tests for stack I/O: loading PNG/TIFF stacks, the x-axis target split,
normalisation, dataset directories and digests.
"""

import numpy as np
import pytest
import tifffile
from PIL import Image

from em_seg_adapt.data.stacks import load_split
from em_seg_adapt.data.stacks import load_stack
from em_seg_adapt.data.stacks import normalize
from em_seg_adapt.data.stacks import read_dataset
from em_seg_adapt.data.stacks import save_stack
from em_seg_adapt.data.stacks import split_paths
from em_seg_adapt.data.stacks import split_target_x
from em_seg_adapt.data.stacks import stack_digest
from em_seg_adapt.data.stacks import write_dataset
from em_seg_adapt.models import ConfigError
from em_seg_adapt.models import DataError
from em_seg_adapt.models import ImageStack
from tests.conftest import random_stack


def _write_pngs(directory, arrays):
    directory.mkdir(parents=True, exist_ok=True)
    for index, arr in enumerate(arrays):
        Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(directory / f"{index:04d}.png")


def _quantized(sections: np.ndarray) -> np.ndarray:
    return np.rint(sections * 255.0).astype(np.uint8).astype(np.float32) / np.float32(255.0)


class TestNormalize:
    def test_affine_rescale(self):
        """Values {10, 20, 30} map to {0, 0.5, 1}."""
        out = normalize(np.array([[10.0, 20.0, 30.0]]))
        np.testing.assert_allclose(out, [[0.0, 0.5, 1.0]])
        assert out.dtype == np.float32

    def test_constant_section_maps_to_zeros(self):
        """A constant section has no range and becomes all zeros."""
        out = normalize(np.full((4, 5), 7.0))
        assert out.shape == (4, 5)
        assert not out.any()

    def test_unit_ramp_unchanged(self):
        """A ramp that already spans exactly [0, 1] is a fixed point."""
        ramp = np.linspace(0.0, 1.0, 11).reshape(1, 11)
        np.testing.assert_array_equal(normalize(ramp), ramp.astype(np.float32))

    def test_non_finite_rejected(self):
        """NaN input raises DataError."""
        with pytest.raises(DataError):
            normalize(np.array([[0.0, np.nan]]))


class TestLoadStack:
    def test_png_directory_max_value(self, tmp_path):
        """Three 64×64 sections of value 255 load as 1.0 everywhere."""
        _write_pngs(tmp_path / "images", [np.full((64, 64), 255)] * 3)
        stack = load_stack(tmp_path / "images")
        assert stack.axis_meta == (3, 64, 64)
        assert (stack.sections == 1.0).all()
        assert stack.labels is None

    def test_sections_sorted_by_filename(self, tmp_path):
        """Sections are ordered by zero-padded file name."""
        _write_pngs(tmp_path / "images", [np.full((8, 8), v) for v in (0, 51, 102)])
        stack = load_stack(tmp_path / "images")
        np.testing.assert_allclose(stack.sections[:, 0, 0], [0.0, 0.2, 0.4], atol=1e-7)

    def test_mixed_dimensions_name_offending_index(self, tmp_path):
        """A 64×63 section among 64×64 ones is reported by its index."""
        arrays = [np.zeros((64, 64)), np.zeros((64, 64)), np.zeros((64, 63))]
        _write_pngs(tmp_path / "images", arrays)
        with pytest.raises(DataError, match="Section 2"):
            load_stack(tmp_path / "images")

    def test_labels_binarised_above_127(self, tmp_path):
        """Label values > 127 become 1, others 0."""
        _write_pngs(tmp_path / "images", [np.zeros((4, 4))])
        _write_pngs(tmp_path / "labels", [np.array([[0, 127, 128, 255]] * 4)])
        stack = load_stack(tmp_path / "images", tmp_path / "labels")
        np.testing.assert_array_equal(stack.labels[0, 0], [0, 0, 1, 1])

    def test_label_count_mismatch(self, tmp_path):
        """Two sections with one label mask is a DataError naming the first unmatched index."""
        _write_pngs(tmp_path / "images", [np.zeros((4, 4))] * 2)
        _write_pngs(tmp_path / "labels", [np.zeros((4, 4))])
        with pytest.raises(DataError, match="first unmatched index 1"):
            load_stack(tmp_path / "images", tmp_path / "labels")

    def test_missing_path(self, tmp_path):
        """A path that does not exist raises DataError."""
        with pytest.raises(DataError, match="does not exist"):
            load_stack(tmp_path / "nowhere")

    def test_multipage_tiff(self, tmp_path):
        """A multi-page 8-bit TIFF loads page by page."""
        pages = np.stack([np.full((6, 10), v, dtype=np.uint8) for v in (0, 255)])
        tifffile.imwrite(tmp_path / "images.tif", pages)
        stack = load_stack(tmp_path / "images.tif")
        assert stack.axis_meta == (2, 6, 10)
        assert stack.sections[1].min() == 1.0

    def test_sixteen_bit_tiff_rejected(self, tmp_path):
        """Only 8-bit stacks are accepted."""
        tifffile.imwrite(tmp_path / "images.tif", np.zeros((2, 4, 4), dtype=np.uint16))
        with pytest.raises(DataError, match="8-bit"):
            load_stack(tmp_path / "images.tif")


class TestSaveStack:
    def test_round_trip_is_exact_for_8bit_values(self, tmp_path):
        """8-bit-representable sections and masks survive save → load unchanged."""
        stack = random_stack(seed=4)
        save_stack(stack, tmp_path / "images", tmp_path / "labels")
        loaded = load_stack(tmp_path / "images", tmp_path / "labels")
        np.testing.assert_array_equal(loaded.sections, stack.sections)
        np.testing.assert_array_equal(loaded.labels, stack.labels)

    def test_zero_padded_names(self, tmp_path):
        """Sections are written as 0000.png, 0001.png, ..."""
        save_stack(random_stack(depth=2, labels=False), tmp_path / "images")
        assert sorted(p.name for p in (tmp_path / "images").iterdir()) == ["0000.png", "0001.png"]

    def test_labels_of_unlabelled_stack(self, tmp_path):
        """Asking for label output of a stack without labels is a DataError."""
        with pytest.raises(DataError):
            save_stack(random_stack(labels=False), tmp_path / "i", tmp_path / "l")


class TestSplitTargetX:
    def test_split_column_is_floored(self):
        """Width 1024 at fraction 0.67 splits into 686 + 338 columns."""
        stack = ImageStack(sections=np.zeros((1, 2, 1024), dtype=np.float32))
        train, test = split_target_x(stack, 0.67)
        assert train.sections.shape[2] == 686
        assert test.sections.shape[2] == 338

    def test_halves_partition_columns(self):
        """Width 100 at 0.5 gives two 50-column halves that concatenate back to the original."""
        stack = random_stack(depth=2, height=5, width=100, seed=8)
        train, test = split_target_x(stack, 0.5)
        assert train.sections.shape[2] == test.sections.shape[2] == 50
        np.testing.assert_array_equal(
            np.concatenate([train.sections, test.sections], axis=2), stack.sections
        )
        np.testing.assert_array_equal(
            np.concatenate([train.labels, test.labels], axis=2), stack.labels
        )

    @pytest.mark.parametrize("fraction", [0.0, 1.0, 1.5, -0.1])
    def test_fraction_out_of_range(self, fraction):
        """Fractions outside (0, 1) raise ConfigError."""
        with pytest.raises(ConfigError):
            split_target_x(random_stack(), fraction)

    def test_empty_side_rejected(self):
        """A fraction that floors to column 0 leaves an empty train split."""
        with pytest.raises(DataError):
            split_target_x(random_stack(width=4), 0.1)


class TestImageStackContract:
    def test_non_binary_labels_rejected(self):
        """Label masks must be {0, 1}."""
        sections = np.zeros((1, 4, 4), dtype=np.float32)
        with pytest.raises(DataError, match="0 and 1"):
            ImageStack(sections=sections, labels=np.full((1, 4, 4), 2, dtype=np.uint8))

    def test_gray_values_outside_unit_interval_rejected(self):
        with pytest.raises(DataError):
            ImageStack(sections=np.full((1, 4, 4), 1.5, dtype=np.float32))

    def test_unlabeled_view_has_no_labels_attribute(self):
        """The label-stripped view cannot leak labels."""
        view = random_stack().unlabeled()
        assert not hasattr(view, "labels")


class TestDatasetDirectory:
    def test_write_then_read(self, tmp_path, tiny_domains):
        """write_dataset/read_dataset round-trip the three splits after 8-bit quantisation."""
        stacks = dict(zip(("source", "target_train", "target_test"), tiny_domains, strict=True))
        write_dataset(tmp_path, stacks)
        loaded = read_dataset(tmp_path)
        for name, stack in stacks.items():
            np.testing.assert_array_equal(loaded[name].sections, _quantized(stack.sections))
            np.testing.assert_array_equal(loaded[name].labels, stack.labels)

    def test_split_paths_prefers_directory_then_tiff(self, tmp_path):
        """``images.tif`` is found when no ``images/`` directory exists; labels are optional."""
        tifffile.imwrite(tmp_path / "images.tif", np.zeros((1, 4, 4), dtype=np.uint8))
        images, labels = split_paths(tmp_path)
        assert images == tmp_path / "images.tif"
        assert labels is None
        assert len(load_split(tmp_path)) == 1


class TestStackDigest:
    def test_equal_content_equal_digest(self):
        assert stack_digest(random_stack(seed=1)) == stack_digest(random_stack(seed=1))

    def test_label_change_changes_digest(self):
        """Labels are part of the digest."""
        stack = random_stack(seed=1)
        flipped = ImageStack(sections=stack.sections, labels=1 - stack.labels)
        assert stack_digest(stack) != stack_digest(flipped)
