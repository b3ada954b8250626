#!/usr/bin/env python3

import json
import unittest
from contextlib import redirect_stderr, redirect_stdout
from io import StringIO
from pathlib import Path
from tempfile import TemporaryDirectory
from typing import List, Tuple
from unittest.mock import patch

import numpy as np

from cvnuclei.config import RunConfig
from cvnuclei.metrics import aggregate, evaluate
from cvnuclei.pipeline import (
    format_loss,
    format_metrics,
    ImageMetrics,
    Pipeline,
    read_labels,
    stem_of,
)
from cvnuclei.pipeline.main import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from cvnuclei.raster import VectorField
from cvnuclei.rasterfile import read_raster, write_raster
from cvnuclei.tests.scene_fixtures import SMALL_SYNTH


BASE_MODULE = "cvnuclei.pipeline.main"
SMALL_SCENES = [
    "-s",
    "synth.height=96",
    "-s",
    "synth.width=96",
    "-s",
    "synth.nucleus_count=8",
    "-s",
    "synth.radius_max=9",
]


def _aggregate_value(stdout: str, metric: str) -> float:
    lines = stdout.splitlines()
    block = lines[lines.index("# aggregate") :]
    for line in block:
        key, _, value = line.partition("=")
        if key == metric:
            return float(value)
    raise AssertionError(f"No {metric} in aggregate block")


class PipelineTests(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = TemporaryDirectory()
        self.tmp_path = Path(self.tmp.name)
        self.logging_patcher = patch(f"{BASE_MODULE}._setup_logging")
        self.logging_patcher.start()

    def tearDown(self) -> None:
        self.logging_patcher.stop()
        self.tmp.cleanup()

    def run_main(self, *argv: str) -> Tuple[int, str, str]:
        stdout, stderr = StringIO(), StringIO()
        with redirect_stdout(stdout), redirect_stderr(stderr):
            returncode = main(list(argv))
        return returncode, stdout.getvalue(), stderr.getvalue()

    def ok(self, *argv: str) -> str:
        returncode, stdout, stderr = self.run_main(*argv)
        self.assertEqual(returncode, EXIT_OK, stderr)
        return stdout

    def synth_small(self, count: int, *extra: str) -> List[Path]:
        out_dir = self.tmp_path / "gt"
        self.ok("synth", "-o", str(out_dir), "-n", str(count), *SMALL_SCENES, *extra)
        return sorted(out_dir.glob("scene_*.cvr"))

    def test_stem_of(self) -> None:
        self.assertEqual(stem_of(Path("a/scene_000.inside.cvr")), "scene_000")
        self.assertEqual(stem_of(Path("scene_001.cvr")), "scene_001")

    def test_map_images_keeps_order(self) -> None:
        pipeline = Pipeline(RunConfig(), self.tmp_path, jobs=3)
        try:
            self.assertEqual(
                pipeline.map_images(lambda i: i * i, list(range(10))),
                [i * i for i in range(10)],
            )
        finally:
            pipeline.close()

    def test_synth_encode_decode_eval(self) -> None:
        gt_dir, enc_dir, dec_dir = (self.tmp_path / n for n in ("gt", "enc", "dec"))
        self.ok("synth", "-o", str(gt_dir), "-n", "2")
        gt_paths = sorted(gt_dir.glob("scene_*.cvr"))
        self.assertEqual([p.name for p in gt_paths], ["scene_000.cvr", "scene_001.cvr"])
        self.assertEqual(read_labels(gt_paths[0]).shape, (256, 256))

        self.ok("encode", "-o", str(enc_dir), *map(str, gt_paths))
        for suffix in (".inside.cvr", ".center.cvr", ".vectors.cvr", ".centroids.txt"):
            self.assertTrue((enc_dir / f"scene_000{suffix}").exists())

        prefixes = [str(enc_dir / stem_of(p)) for p in gt_paths]
        self.ok("decode", "-o", str(dec_dir), *prefixes)
        self.assertIn(
            "fallback_pixels=", (dec_dir / "scene_000.decode.txt").read_text()
        )

        pred_paths = [str(dec_dir / f"{stem_of(p)}.instances.cvr") for p in gt_paths]
        stdout = self.ok(
            "eval", "--gt", *map(str, gt_paths), "--pred", *pred_paths
        )
        self.assertIn("# image scene_000", stdout)
        self.assertIn("# image scene_001", stdout)
        self.assertIn("images=2", stdout)
        self.assertGreaterEqual(_aggregate_value(stdout, "aji"), 0.98)
        self.assertEqual(_aggregate_value(stdout, "iou"), 1.0)

    def test_eval_identity(self) -> None:
        gt_paths = self.synth_small(1)
        stdout = self.ok("eval", "--gt", str(gt_paths[0]), "--pred", str(gt_paths[0]))
        self.assertTrue(stdout.endswith("aji=1.000000\niou=1.000000\ndice=1.000000\n"))

    def test_eval_groups_json_and_loss(self) -> None:
        gt_paths = self.synth_small(2)
        enc_dir = self.tmp_path / "enc"
        self.ok("encode", "-o", str(enc_dir), *map(str, gt_paths))
        json_path = self.tmp_path / "report.json"
        stdout = self.ok(
            "eval",
            "--gt",
            *map(str, gt_paths),
            "--pred",
            *map(str, gt_paths),
            "--group",
            "colon",
            "liver",
            "--loss",
            *(str(enc_dir / stem_of(p)) for p in gt_paths),
            "--json",
            str(json_path),
        )
        self.assertIn("group=colon", stdout)
        self.assertIn("# group liver", stdout)
        self.assertIn("# loss scene_001", stdout)
        self.assertIn("ms=0.000000", stdout)

        report = json.loads(json_path.read_text())
        self.assertEqual(report["aggregate"]["images"], 2)
        self.assertEqual(report["aggregate"]["aji"], 1.0)
        self.assertEqual(set(report["groups"]), {"colon", "liver"})
        self.assertEqual(report["images"][0]["unmatched_preds"], [])

    def test_corrupt_then_decode(self) -> None:
        gt_paths = self.synth_small(1)
        noisy_dir, dec_dir = self.tmp_path / "noisy", self.tmp_path / "dec"
        self.ok("corrupt", "-o", str(noisy_dir), str(gt_paths[0]))
        inside = read_raster(noisy_dir / "scene_000.inside.cvr")
        assert isinstance(inside, np.ndarray)
        self.assertEqual(inside.dtype, np.float64)

        self.ok("decode", "-o", str(dec_dir), str(noisy_dir / "scene_000"))
        decoded = read_labels(dec_dir / "scene_000.instances.cvr")
        self.assertGreaterEqual(evaluate(read_labels(gt_paths[0]), decoded).aji, 0.98)

        self.ok(
            "corrupt",
            "-o",
            str(noisy_dir),
            "-s",
            "corrupt.vector_noise_sigma=1.0",
            "-s",
            "corrupt.boundary_dilation=1",
            str(gt_paths[0]),
        )
        vectors = read_raster(noisy_dir / "scene_000.vectors.cvr")
        assert isinstance(vectors, VectorField)
        self.assertTrue(np.isfinite(vectors.dx).all())

    def test_baseline_rw_and_pgm(self) -> None:
        gt_paths = self.synth_small(1, "--pgm")
        self.assertTrue((self.tmp_path / "gt" / "scene_000.pgm").exists())
        enc_dir, rw_dir = self.tmp_path / "enc", self.tmp_path / "rw"
        self.ok("encode", "-o", str(enc_dir), str(gt_paths[0]))
        self.ok("baseline-rw", "-o", str(rw_dir), "--pgm", str(enc_dir / "scene_000"))
        self.assertTrue((rw_dir / "scene_000.rw.pgm").exists())

        walked = read_labels(rw_dir / "scene_000.rw.cvr")
        gt = read_labels(gt_paths[0])
        np.testing.assert_array_equal(walked > 0, gt > 0)
        self.assertGreater(int(walked.max()), 0)

    def test_parallel_matches_sequential(self) -> None:
        outputs = []
        for jobs in ("1", "3"):
            out_dir = self.tmp_path / f"jobs{jobs}"
            gt_dir, enc_dir = str(out_dir / "gt"), str(out_dir / "enc")
            self.ok("synth", "-o", gt_dir, "-n", "3", "-j", jobs, *SMALL_SCENES)
            gt_paths = sorted((out_dir / "gt").glob("*.cvr"))
            self.ok("encode", "-o", enc_dir, "-j", jobs, *map(str, gt_paths))
            self.ok(
                "decode",
                "-o",
                str(out_dir / "dec"),
                "-j",
                jobs,
                *(str(out_dir / "enc" / stem_of(p)) for p in gt_paths),
            )
            outputs.append(
                {
                    path.relative_to(out_dir): path.read_bytes()
                    for path in sorted(out_dir.rglob("*"))
                    if path.is_file()
                }
            )
        self.assertEqual(outputs[0], outputs[1])

    def test_reruns_are_byte_identical(self) -> None:
        first = [p.read_bytes() for p in self.synth_small(2)]
        second = [p.read_bytes() for p in self.synth_small(2)]
        self.assertEqual(first, second)
        third = [p.read_bytes() for p in self.synth_small(2, "-s", "synth.seed=5")]
        self.assertNotEqual(first, third)

    def test_data_errors(self) -> None:
        prefix = self.tmp_path / "bad"
        write_raster(np.zeros((4, 4)), Path(f"{prefix}.inside.cvr"))
        write_raster(np.zeros((4, 5)), Path(f"{prefix}.center.cvr"))
        write_raster(VectorField.zeros((4, 4)), Path(f"{prefix}.vectors.cvr"))
        returncode, _, stderr = self.run_main(
            "decode", "-o", str(self.tmp_path / "out"), str(prefix)
        )
        self.assertEqual(returncode, EXIT_DATA)
        self.assertIn("cvnuclei: data error:", stderr)
        self.assertIn("shapes do not match", stderr)

        returncode, _, stderr = self.run_main(
            "eval", "--gt", str(self.tmp_path / "missing.cvr"), "--pred", "x.cvr"
        )
        self.assertEqual(returncode, EXIT_DATA)

        (self.tmp_path / "junk.cvr").write_bytes(b"not a raster at all!!")
        returncode, _, stderr = self.run_main(
            "eval", "--gt", str(self.tmp_path / "junk.cvr"), "--pred", "x.cvr"
        )
        self.assertEqual(returncode, EXIT_DATA)

    def test_usage_errors(self) -> None:
        out = str(self.tmp_path / "out")
        for argv in (
            (),
            ("segment", "-o", out),
            ("synth",),
            ("synth", "-o", out, "-n", "0"),
            ("synth", "-o", out, "-j", "0"),
            ("synth", "-o", out, "-s", "synth.colour=red"),
            ("synth", "-o", out, "-s", "decode.inside_threshold=2"),
            ("synth", "-o", out, "-c", str(self.tmp_path / "missing.conf")),
            ("eval", "--gt", "a.cvr", "b.cvr", "--pred", "a.cvr"),
            ("eval", "--gt", "a.cvr", "--pred", "a.cvr", "--group", "x", "y"),
            ("eval", "--gt", "a.cvr", "--pred", "a.cvr", "--mode", "greedy"),
        ):
            returncode, _, stderr = self.run_main(*argv)
            self.assertEqual(returncode, EXIT_USAGE, argv)
            self.assertIn("cvnuclei: usage error:", stderr)

    def test_format_helpers(self) -> None:
        gt = np.array([[1, 1, 0]])
        report = evaluate(gt, np.array([[0, 1, 1]]))
        images = [ImageMetrics("scene_000", "colon", report)]
        text = format_metrics(images, aggregate([report], ["colon"]))
        self.assertEqual(
            text.splitlines(),
            [
                "# image scene_000",
                "group=colon",
                "aji=0.333333",
                "iou=0.333333",
                "dice=0.500000",
                "# group colon",
                "images=1",
                "aji=0.333333",
                "iou=0.333333",
                "dice=0.500000",
                "# aggregate",
                "images=1",
                "aji=0.333333",
                "iou=0.333333",
                "dice=0.500000",
            ],
        )

        pipeline = Pipeline(RunConfig(synth=SMALL_SYNTH), self.tmp_path)
        gt_path = pipeline.synth_one(0)
        prefix = pipeline.encode_one(gt_path)
        loss_text = format_loss(pipeline.loss(gt_path, prefix))
        self.assertEqual(
            [line.split("=")[0] for line in loss_text.splitlines()],
            ["loss", "ce", "iou_loss", "ms"],
        )


if __name__ == "__main__":
    unittest.main()
