#!/usr/bin/env python3
""" Run pipeline stages over many images, optionally on an executor """

import asyncio
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import (
    Callable,
    Dict,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    TypeVar,
)

import numpy as np

from cvnuclei.config import RunConfig
from cvnuclei.decoding import decode_instances, DecodeReport, extract_center_regions
from cvnuclei.encoding import encode_targets, EncodedTargets
from cvnuclei.losses import targets_to_loss_tensors, total_loss, TotalLoss
from cvnuclei.metrics import (
    aggregate,
    AggregateReport,
    AJIMode,
    evaluate,
    MetricReport,
)
from cvnuclei.randomwalker import random_walker_segment
from cvnuclei.raster import check_same_shape, VectorField
from cvnuclei.rasterfile import (
    format_centroids,
    read_probability_field,
    read_raster,
    RasterKind,
    write_pgm,
    write_raster,
)
from cvnuclei.synth import corrupt_targets, generate_scene, perturb_annotation


LOG = logging.getLogger(__name__)
T = TypeVar("T")
R = TypeVar("R")

# File name suffixes of one image's targets or predictions
INSIDE_SUFFIX = ".inside.cvr"
CENTER_SUFFIX = ".center.cvr"
VECTORS_SUFFIX = ".vectors.cvr"
CENTROIDS_SUFFIX = ".centroids.txt"


class ImageMetrics(NamedTuple):
    name: str
    group: Optional[str]
    report: MetricReport


class Prediction(NamedTuple):
    inside: np.ndarray
    center: np.ndarray
    vectors: VectorField


def stem_of(path: Path) -> str:
    """File name up to the first dot: scene_000.inside.cvr -> scene_000"""
    return path.name.split(".", 1)[0]


def read_prediction(prefix: Path) -> Prediction:
    inside = read_probability_field(Path(f"{prefix}{INSIDE_SUFFIX}"))
    center = read_probability_field(Path(f"{prefix}{CENTER_SUFFIX}"))
    vectors = read_raster(Path(f"{prefix}{VECTORS_SUFFIX}"), RasterKind.VECTOR)
    assert isinstance(vectors, VectorField)
    check_same_shape(inside, center, vectors.dx, vectors.dy)
    return Prediction(inside, center, vectors)


def read_labels(path: Path) -> np.ndarray:
    labels = read_raster(path, RasterKind.LABELS)
    assert isinstance(labels, np.ndarray)
    return labels


class Pipeline:
    """Each stage maps a per-image job over its inputs. With more than one
    job the work runs on the executor and is gathered in input order, so
    outputs do not depend on scheduling."""

    def __init__(
        self,
        config: RunConfig,
        output_dir: Path,
        *,
        executor: Optional[ThreadPoolExecutor] = None,
        jobs: int = 1,
        export_pgm: bool = False,
        aji_mode: AJIMode = AJIMode.LITERAL,
    ) -> None:
        self.aji_mode = aji_mode
        self.config = config
        self.export_pgm = export_pgm
        self.jobs = max(jobs, 1)
        self.output_dir = output_dir

        self.executor = executor
        if not executor and self.jobs > 1:
            self.executor = ThreadPoolExecutor(
                max_workers=self.jobs, thread_name_prefix="PipelineDefault"
            )

    def close(self) -> None:
        if self.executor:
            LOG.debug("Shutting down executor pool")
            self.executor.shutdown(wait=True)

    async def _gather(self, job: Callable[[T], R], items: Sequence[T]) -> List[R]:
        loop = asyncio.get_running_loop()
        return await asyncio.gather(
            *(loop.run_in_executor(self.executor, job, item) for item in items)
        )

    def map_images(self, job: Callable[[T], R], items: Sequence[T]) -> List[R]:
        if self.jobs == 1 or len(items) < 2:
            return [job(item) for item in items]
        LOG.debug(f"Running {len(items)} jobs on {self.jobs} workers")
        return asyncio.run(self._gather(job, items))

    def _write_labels(self, labels: np.ndarray, name: str) -> Path:
        out_path = self.output_dir / f"{name}.cvr"
        write_raster(labels, out_path)
        if self.export_pgm:
            write_pgm(labels, self.output_dir / f"{name}.pgm")
        return out_path

    # synth
    def synth_one(self, index: int) -> Path:
        params = self.config.synth._replace(seed=self.config.synth.seed + index)
        scene = generate_scene(params)
        out_path = self._write_labels(scene, f"scene_{index:03d}")
        LOG.info(f"Wrote {int(scene.max())} nuclei (seed {params.seed}) to {out_path}")
        return out_path

    def synth(self, count: int) -> List[Path]:
        return self.map_images(self.synth_one, list(range(count)))

    # encode
    def encode_one(self, gt_path: Path) -> Path:
        targets = encode_targets(read_labels(gt_path), self.config.encode)
        prefix = self.output_dir / stem_of(gt_path)
        write_targets(targets, prefix)
        LOG.info(f"Encoded {len(targets.centroids)} instances from {gt_path}")
        return prefix

    def encode(self, gt_paths: Sequence[Path]) -> List[Path]:
        return self.map_images(self.encode_one, gt_paths)

    # corrupt
    def corrupt_one(self, gt_path: Path) -> Path:
        gt = read_labels(gt_path)
        params = self.config.corrupt
        if params.boundary_dilation:
            gt = perturb_annotation(gt, params.boundary_dilation)
        targets = encode_targets(gt, self.config.encode)
        inside, center, vectors = corrupt_targets(targets, params)
        prefix = self.output_dir / stem_of(gt_path)
        write_raster(inside, Path(f"{prefix}{INSIDE_SUFFIX}"))
        write_raster(center, Path(f"{prefix}{CENTER_SUFFIX}"))
        write_raster(vectors, Path(f"{prefix}{VECTORS_SUFFIX}"))
        LOG.info(f"Wrote corrupted predictions for {gt_path} to {prefix}")
        return prefix

    def corrupt(self, gt_paths: Sequence[Path]) -> List[Path]:
        return self.map_images(self.corrupt_one, gt_paths)

    # decode
    def decode_one(self, prefix: Path) -> DecodeReport:
        prediction = read_prediction(prefix)
        instances, report = decode_instances(
            prediction.inside, prediction.center, prediction.vectors, self.config.decode
        )
        name = f"{prefix.name}.instances"
        out_path = self._write_labels(instances, name)
        (self.output_dir / f"{prefix.name}.decode.txt").write_text(report.to_text())
        LOG.info(f"Decoded {int(instances.max())} instances to {out_path}")
        return report

    def decode(self, prefixes: Sequence[Path]) -> List[DecodeReport]:
        return self.map_images(self.decode_one, prefixes)

    # baseline-rw
    def random_walker_one(self, prefix: Path) -> Path:
        inside_prob = read_probability_field(Path(f"{prefix}{INSIDE_SUFFIX}"))
        center_prob = read_probability_field(Path(f"{prefix}{CENTER_SUFFIX}"))
        check_same_shape(inside_prob, center_prob)
        params = self.config.decode
        inside = inside_prob >= params.inside_threshold
        regions = extract_center_regions(
            center_prob >= params.center_threshold, params.connectivity
        )
        instances = random_walker_segment(inside, regions, inside_prob, self.config.rw)
        out_path = self._write_labels(instances, f"{prefix.name}.rw")
        LOG.info(f"Random walker found {int(instances.max())} instances: {out_path}")
        return out_path

    def random_walker(self, prefixes: Sequence[Path]) -> List[Path]:
        return self.map_images(self.random_walker_one, prefixes)

    # eval
    def evaluate_pair(self, paths: Tuple[Path, Path]) -> MetricReport:
        gt_path, pred_path = paths
        return evaluate(read_labels(gt_path), read_labels(pred_path), self.aji_mode)

    def evaluate(
        self,
        gt_paths: Sequence[Path],
        pred_paths: Sequence[Path],
        groups: Optional[Sequence[str]] = None,
    ) -> Tuple[List[ImageMetrics], AggregateReport]:
        if len(gt_paths) != len(pred_paths):
            raise ValueError(
                f"{len(gt_paths)} ground truth files for {len(pred_paths)} predictions"
            )
        reports = self.map_images(self.evaluate_pair, list(zip(gt_paths, pred_paths)))
        images = [
            ImageMetrics(stem_of(path), groups[i] if groups else None, report)
            for i, (path, report) in enumerate(zip(gt_paths, reports))
        ]
        return images, aggregate(reports, groups)

    def loss(self, gt_path: Path, prediction_prefix: Path) -> TotalLoss:
        gt = read_labels(gt_path)
        targets = encode_targets(gt, self.config.encode)
        prediction = read_prediction(prediction_prefix)
        check_same_shape(gt, prediction.inside)
        tensors = targets_to_loss_tensors(
            targets, prediction.inside, prediction.center, prediction.vectors
        )
        return total_loss(
            *tensors, w=self.config.loss, reduction=self.config.ms_reduction
        )


def write_targets(targets: EncodedTargets, prefix: Path) -> None:
    write_raster(targets.inside, Path(f"{prefix}{INSIDE_SUFFIX}"))
    write_raster(targets.center, Path(f"{prefix}{CENTER_SUFFIX}"))
    write_raster(targets.vectors, Path(f"{prefix}{VECTORS_SUFFIX}"))
    Path(f"{prefix}{CENTROIDS_SUFFIX}").write_text(format_centroids(targets.centroids))


def format_metrics(images: Sequence[ImageMetrics], summary: AggregateReport) -> str:
    """`metric=value` lines, one block per image, then group and aggregate
    blocks"""
    lines: List[str] = []
    for image in images:
        lines.append(f"# image {image.name}")
        if image.group:
            lines.append(f"group={image.group}")
        lines.extend(image.report.to_text().splitlines())
    for name, (mean_aji, mean_iou, mean_dice, count) in summary.groups.items():
        lines.append(f"# group {name}")
        lines.append(f"images={count}")
        lines.extend(
            [f"aji={mean_aji:.6f}", f"iou={mean_iou:.6f}", f"dice={mean_dice:.6f}"]
        )
    lines.append("# aggregate")
    lines.append(f"images={summary.images}")
    lines.extend(
        [f"aji={summary.aji:.6f}", f"iou={summary.iou:.6f}", f"dice={summary.dice:.6f}"]
    )
    return "\n".join(lines) + "\n"


def metrics_to_json(images: Sequence[ImageMetrics], summary: AggregateReport) -> str:
    payload: Dict = {
        "images": [
            {
                "name": image.name,
                "group": image.group,
                "aji": image.report.aji,
                "iou": image.report.iou,
                "dice": image.report.dice,
                "matches": [
                    pair._asdict() for pair in image.report.assignment.pairs
                ],
                "unmatched_preds": sorted(image.report.assignment.unmatched_preds),
            }
            for image in images
        ],
        "groups": {
            name: {"aji": a, "iou": i, "dice": d, "images": n}
            for name, (a, i, d, n) in summary.groups.items()
        },
        "aggregate": {
            "aji": summary.aji,
            "iou": summary.iou,
            "dice": summary.dice,
            "images": summary.images,
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def format_loss(loss: TotalLoss) -> str:
    return (
        f"loss={loss.value:.6f}\nce={loss.ce:.6f}\niou_loss={loss.iou:.6f}\n"
        + f"ms={loss.ms:.6f}\n"
    )
