"""
Unit tests for the run_store module.
"""

import unittest
import os
import sys
import shutil
import tempfile

import numpy as np

# Import from parent directory
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from oracle import GridField, ground_state_wigner, uniform_grid
from run_store import MAGIC, CheckpointFormatError, RunStore, decode_container, encode_container


class TestContainer(unittest.TestCase):
    """Test suite for the binary container format."""

    def test_round_trip_is_bit_exact(self):
        arrays = {"a": np.array([0.1, -2.5e-300, np.pi]), "b": np.arange(6.0).reshape(2, 3),
                  "scalar": np.array([1.0 / 3.0])}
        decoded, meta = decode_container(encode_container(arrays, {"epoch": 4, "note": "x"}))
        self.assertEqual(meta, {"epoch": 4, "note": "x"})
        for name, value in arrays.items():
            np.testing.assert_array_equal(decoded[name], value)
            self.assertEqual(decoded[name].shape, value.shape)

    def test_encoding_ignores_insertion_order(self):
        first = {"b": np.ones(2), "a": np.arange(3.0)}
        second = {"a": np.arange(3.0), "b": np.ones(2)}
        self.assertEqual(encode_container(first, {"y": 1, "x": 2}), encode_container(second, {"x": 2, "y": 1}))

    def test_bad_magic(self):
        blob = encode_container({"a": np.zeros(2)})
        with self.assertRaises(CheckpointFormatError):
            decode_container(b"XXXX" + blob[4:])
        self.assertTrue(blob.startswith(MAGIC))

    def test_truncated(self):
        blob = encode_container({"a": np.zeros(4)})
        with self.assertRaises(CheckpointFormatError):
            decode_container(blob[:-3])

    def test_trailing_bytes(self):
        with self.assertRaises(CheckpointFormatError):
            decode_container(encode_container({"a": np.zeros(1)}) + b"\x00")


class TestRunStore(unittest.TestCase):
    """Test suite for the RunStore class."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.store = RunStore(os.path.join(self.test_dir, "run"))

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_layout(self):
        self.assertTrue(os.path.isdir(self.store.checkpoint_dir))

    def test_checkpoint_by_name_and_path(self):
        path = self.store.save_checkpoint("epoch-000001", {"w": np.ones((2, 2))}, {"epoch": 1})
        by_name, _ = self.store.load_checkpoint("epoch-000001")
        by_path, meta = self.store.load_checkpoint(path)
        np.testing.assert_array_equal(by_name["w"], by_path["w"])
        self.assertEqual(meta["epoch"], 1)

    def test_missing_checkpoint(self):
        with self.assertRaises(CheckpointFormatError):
            self.store.load_checkpoint("nowhere")

    def test_metrics_header_written_once(self):
        self.store.append_metrics({"epoch": 1, "loss": 0.5})
        self.store.append_metrics({"loss": 0.25, "epoch": 2})
        with open(self.store.path("metrics.csv"), encoding="utf-8") as handle:
            lines = handle.read().splitlines()
        self.assertEqual(lines[0], "epoch,loss")
        self.assertEqual(len(lines), 3)
        self.assertEqual(list(self.store.read_table("metrics.csv")["loss"]), [0.5, 0.25])

    def test_json_report_with_numpy_values(self):
        self.store.write_json({"value": np.float64(1.5), "flags": np.array([True, False])}, "report.json")
        self.assertEqual(self.store.read_json("report.json"), {"value": 1.5, "flags": [True, False]})

    def test_grid_field_round_trip(self):
        nodes = uniform_grid(16, -4.0, 4.0)
        field = GridField.from_function(ground_state_wigner, nodes, nodes)
        self.store.save_grid_field(field, "ground")
        loaded = self.store.load_grid_field("ground")
        np.testing.assert_array_equal(loaded.values, field.values)
        self.assertEqual(len(self.store.read_table("ground.csv")), 256)

    def test_grid_field_kind_checked(self):
        self.store.write_container(self.store.path("other.grid"), {"x": np.zeros(1)}, {"kind": "train_state"})
        with self.assertRaises(CheckpointFormatError):
            self.store.load_grid_field("other")


if __name__ == "__main__":
    unittest.main()
