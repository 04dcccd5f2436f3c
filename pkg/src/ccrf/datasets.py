"""Labelled examples, dataset containers, and manifest I/O.

A dataset directory holds one manifest per split (train/val/test).  Each
manifest is a plain text file: comment lines start with '#', the first
data line tags the task, and every following line names an image grid,
a segmentation grid, and a target grid, relative to the manifest.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .graph import ImageGrid, SuperpixelSegmentation
from .gridio import read_f32grid, write_f32grid

TASKS = ("segmentation", "depth")
SPLIT_MANIFESTS = {
    "train": "train.manifest",
    "val": "val.manifest",
    "test": "test.manifest",
}


@dataclass
class LabeledExample:
    """An image, its node segmentation, and per-node target vectors."""

    image: ImageGrid
    seg: SuperpixelSegmentation
    targets: np.ndarray  # (n, m) one-hot rows or (n, 1) regression values
    task: str

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        targets = np.asarray(self.targets, dtype=np.float64)
        if targets.ndim != 2 or targets.shape[0] != self.seg.n:
            raise ValueError(
                f"targets must be ({self.seg.n}, m), got shape {targets.shape}"
            )
        if self.seg.shape != (self.image.height, self.image.width):
            raise ValueError("segmentation does not match image size")
        self.targets = targets


@dataclass
class Dataset:
    task: str
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def split(self, name: str) -> list:
        if name not in SPLIT_MANIFESTS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def write_manifest(directory, split: str, task: str, examples) -> None:
    """Write one split: the manifest line plus a file triplet per example."""
    os.makedirs(directory, exist_ok=True)
    lines = ["# dataset manifest", f"task={task}"]
    for i, example in enumerate(examples):
        stem = f"{split}_{i:04d}"
        img = f"{stem}_img.f32grid"
        seg = f"{stem}_seg.f32grid"
        tgt = f"{stem}_tgt.f32grid"
        write_f32grid(os.path.join(directory, img), example.image.values)
        write_f32grid(os.path.join(directory, seg), example.seg.label_map.astype(np.float64))
        write_f32grid(os.path.join(directory, tgt), example.targets)
        lines.append(f"{img} {seg} {tgt}")
    with open(os.path.join(directory, SPLIT_MANIFESTS[split]), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> tuple[str, list]:
    """Load one manifest; returns (task, examples)."""
    directory = os.path.dirname(os.path.abspath(path))
    task = None
    examples = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if task is None:
                if not line.startswith("task="):
                    raise ValueError(f"{path}:{lineno}: expected a task tag line")
                task = line.split("=", 1)[1].strip()
                if task not in TASKS:
                    raise ValueError(f"{path}:{lineno}: unknown task {task!r}")
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected an image/seg/target triplet")
            img = read_f32grid(os.path.join(directory, parts[0]))
            seg_values = read_f32grid(os.path.join(directory, parts[1]))
            targets = read_f32grid(os.path.join(directory, parts[2]))
            label_map = np.rint(seg_values).astype(np.int64)
            seg = SuperpixelSegmentation(label_map, int(label_map.max()) + 1)
            if targets.ndim == 1:
                targets = targets[:, None]
            examples.append(LabeledExample(ImageGrid(img), seg, targets, task))
    if task is None:
        raise ValueError(f"{path}: manifest has no task tag")
    return task, examples


def save_dataset(dataset: Dataset, directory) -> None:
    for split in SPLIT_MANIFESTS:
        write_manifest(directory, split, dataset.task, dataset.split(split))


def load_dataset(directory) -> Dataset:
    """Read every split manifest present under ``directory``."""
    task = None
    splits: dict[str, list] = {}
    for split, name in SPLIT_MANIFESTS.items():
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            splits[split] = []
            continue
        split_task, examples = read_manifest(path)
        if task is None:
            task = split_task
        elif task != split_task:
            raise ValueError(f"{directory}: split manifests disagree on the task")
        splits[split] = examples
    if task is None:
        raise ValueError(f"{directory}: no dataset manifests found")
    return Dataset(task, splits["train"], splits["val"], splits["test"])
