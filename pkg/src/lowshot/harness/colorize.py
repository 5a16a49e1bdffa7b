"""Colorization experiment: sweep cells under the luma operator plus a figure grid."""

import csv
import os

import numpy as np

from ..operators import luma_operator
from .data import load_dataset
from .plotting import render_grid
from .sweep import recon_path, run_sweep
from .synthetic import chroma_error

GRID = "colorization_grid.png"
METRICS = "colorization_metrics.csv"


def grayscale_image(truth):
    """Luma of ``truth`` replicated to three channels, back on the [-1, 1] scale."""
    op = luma_operator(np.shape(truth))
    gray = op.apply(truth) * 2 - 1
    return np.repeat(gray[None], 3, axis=0)


def build_grid(outcome, dataset, max_columns=8):
    """Rows: truth, grayscale, then one row per method; returns (grid, labels, annotations)."""
    ids = dataset.test_ids[:max_columns]
    truths = dict(zip(dataset.test_ids, dataset.test_images))
    methods = []
    for row in outcome.rows:
        tag = (row.method, row.shots, row.loss)
        if tag not in methods:
            methods.append(tag)
    by_key = {(r.method, r.shots, r.loss, r.image_id): r for r in outcome.rows}
    grid = [[truths[i] for i in ids], [grayscale_image(truths[i]) for i in ids]]
    labels = ["truth", "grayscale"]
    annotations = [[None] * len(ids), [None] * len(ids)]
    for method, s, loss in methods:
        recs, notes = [], []
        for i in ids:
            row = by_key[(method, s, loss, i)]
            recs.append(np.load(recon_path(outcome.output_dir, row.key)))
            notes.append(row.psnr)
        grid.append(recs)
        annotations.append(notes)
        labels.append("untrained" if method == "untrained" else f"S={s} {loss}")
    return grid, labels, annotations


def chroma_metrics(outcome, dataset):
    truths = dict(zip(dataset.test_ids, dataset.test_images))
    out = []
    for row in outcome.rows:
        recon = np.load(recon_path(outcome.output_dir, row.key))
        out.append({
            "image_id": row.image_id, "method": row.method, "S": row.shots, "loss": row.loss,
            "psnr": row.psnr, "chroma_error": chroma_error(recon, truths[row.image_id]),
        })
    return out


def run_colorization(spec, max_new_cells=None, workers=None, dataset=None):
    """Run the luma-operator sweep; when complete also write the grid and chroma metrics."""
    if spec.task != "colorization":
        raise ValueError("spec.task must be 'colorization'")
    if dataset is None:
        dataset = load_dataset(spec.data_directory, spec.descriptor.resolution, spec.n_test,
                               spec.test_directory)
    outcome = run_sweep(spec, max_new_cells, workers, dataset)
    if not outcome.complete:
        return outcome, None
    grid, labels, notes = build_grid(outcome, dataset)
    render_grid(grid, labels, notes, os.path.join(spec.output_dir, GRID))
    metrics = chroma_metrics(outcome, dataset)
    with open(os.path.join(spec.output_dir, METRICS), "w", newline="") as fh:
        w = csv.DictWriter(fh, ["image_id", "method", "S", "loss", "psnr", "chroma_error"],
                           lineterminator="\n")
        w.writeheader()
        for m in metrics:
            w.writerow({**m, "psnr": repr(m["psnr"]), "chroma_error": repr(m["chroma_error"])})
    return outcome, metrics

