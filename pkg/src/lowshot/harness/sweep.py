"""Experiment sweeps over (ratio, shots, loss, test image) cells.

Each cell is one reconstruction of one test image by one method. Rows are
appended to ``results.csv`` as cells finish, so an interrupted sweep picks
up where it stopped; once every cell is done the file is rewritten in the
canonical cell order, which makes its bytes independent of scheduling.

Seeds are derived from the root seed and the cell's key with SHA-256, so a
single cell can be replayed on its own from ``manifest.json``.
"""

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace

import numpy as np

from ..checkpoint import file_digest, load_checkpoint
from ..errors import ConfigError, NumericError
from ..invert import invert, solve_untrained
from ..operators import gaussian_for_ratio, luma_operator, measure
from ..pretrain import fit_latent_gaussian
from .config import ExperimentSpec
from .data import load_dataset, load_image

log = logging.getLogger(__name__)

HEADER = ["task", "ratio", "S", "loss", "method", "seed", "image_id", "psnr", "wall_ms"]
WORKERS_ENV = "LOWSHOT_WORKERS"
RESULTS = "results.csv"
SUMMARY = "summary.csv"
MANIFEST = "manifest.json"
CELL_LOG = "cells.jsonl"


def derive_seed(*parts):
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def format_ratio(ratio):
    return repr(float(ratio))


@dataclass(frozen=True)
class Cell:
    task: str
    ratio: float
    shots: int
    loss: str
    method: str
    image_id: str

    @property
    def key(self):
        return "|".join([self.task, format_ratio(self.ratio), str(self.shots), self.loss,
                         self.method, self.image_id])

    def seeds(self, root):
        site = (self.task, format_ratio(self.ratio), self.image_id)
        return {
            "operator": derive_seed(root, "operator", *site),
            "noise": derive_seed(root, "noise", *site),
            "inversion": derive_seed(root, "inversion", self.key),
        }


@dataclass
class ResultRow:
    task: str
    ratio: float
    shots: int
    loss: str
    method: str
    seed: int
    image_id: str
    psnr: float
    wall_ms: int

    @property
    def key(self):
        return Cell(self.task, self.ratio, self.shots, self.loss, self.method, self.image_id).key

    def fields(self):
        return [self.task, format_ratio(self.ratio), str(self.shots), self.loss, self.method,
                str(self.seed), self.image_id, repr(float(self.psnr)), str(self.wall_ms)]

    @classmethod
    def parse(cls, fields):
        if len(fields) != len(HEADER):
            raise ValueError(f"expected {len(HEADER)} fields, got {len(fields)}")
        t, r, s, loss, m, seed, img, p, w = fields
        return cls(t, float(r), int(s), loss, m, int(seed), img, float(p), int(w))


def _csv_line(fields):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(fields)
    return buf.getvalue()


def read_rows(path):
    """Parse a results CSV, dropping malformed lines (e.g. a half-written tail)."""
    rows = {}
    if not os.path.exists(path):
        return rows
    with open(path, newline="") as fh:
        text = fh.read()
    lines = text.split("\n")
    complete = lines[:-1] if not text.endswith("\n") else lines
    for lineno, line in enumerate(complete, 1):
        if not line or lineno == 1 and line.split(",") == HEADER:
            continue
        try:
            row = ResultRow.parse(next(csv.reader([line])))
        except (ValueError, StopIteration):
            log.warning("%s:%d: dropping malformed row", path, lineno)
            continue
        rows[row.key] = row
    return rows


def write_rows(path, rows):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(_csv_line(HEADER))
        for row in rows:
            fh.write(_csv_line(row.fields()))
    os.replace(tmp, path)


def aggregate(rows):
    """Mean and (population) std of PSNR per (task, ratio, S, loss, method)."""
    groups = {}
    for row in rows:
        k = (row.task, row.ratio, row.shots, row.loss, row.method)
        groups.setdefault(k, []).append(row.psnr)
    out = []
    for k, values in groups.items():
        v = np.asarray(values)
        out.append(dict(zip(("task", "ratio", "S", "loss", "method"), k),
                        n=len(v), mean_psnr=float(v.mean()), std_psnr=float(v.std())))
    return out


def write_summary(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "ratio", "S", "loss", "method", "n", "mean_psnr", "std_psnr"])
        for g in aggregate(rows):
            w.writerow([g["task"], format_ratio(g["ratio"]), g["S"], g["loss"], g["method"],
                        g["n"], repr(g["mean_psnr"]), repr(g["std_psnr"])])


# -- cell planning and execution ------------------------------------------


def task_ratios(spec):
    if spec.task == "colorization":
        return [luma_operator(spec.descriptor.image_shape).ratio]
    return list(spec.ratios)


def plan_cells(spec, image_ids):
    cells = []
    for ratio in task_ratios(spec):
        for image_id in image_ids:
            if spec.baseline:
                cells.append(Cell(spec.task, ratio, 0, "-", "untrained", image_id))
            for s in spec.shots:
                for loss in spec.losses:
                    cells.append(Cell(spec.task, ratio, s, loss, "lowshot", image_id))
    return cells


def make_operator(spec, cell, seeds):
    if spec.task == "colorization":
        return luma_operator(spec.descriptor.image_shape)
    return gaussian_for_ratio(cell.ratio, spec.descriptor.image_shape, seeds["operator"])


_MODEL_CACHE = {}


def _load_model(path, descriptor):
    digest = file_digest(path)
    if digest not in _MODEL_CACHE:
        theta, latents, _, _ = load_checkpoint(path, expected=descriptor)
        _MODEL_CACHE[digest] = (theta, fit_latent_gaussian(latents))
    return _MODEL_CACHE[digest]


def execute_cell(spec, cell, truth):
    """Run one cell; returns ``(row, reconstruction, extras)``."""
    seeds = cell.seeds(spec.seed)
    op = make_operator(spec, cell, seeds)
    y = measure(op, truth, spec.noise_std, seeds["noise"])
    start = time.perf_counter()
    if cell.method == "untrained":
        u = spec.untrained
        result = solve_untrained(
            y, op, spec.descriptor, seed=seeds["inversion"], iterations=u.get("iterations"),
            lr=u.get("lr", 1e-3), momentum=u.get("momentum", 0.9), truth=truth,
        )
        extras = {"iterations": result.metrics["iterations"], "final_loss": result.metrics["final_loss"]}
    else:
        theta, fit = _load_model(spec.checkpoint_path(cell.shots, cell.loss), spec.descriptor)
        cfg = replace(spec.inversion, seed=seeds["inversion"])
        result = invert(y, op, theta, fit, cfg, truth=truth)
        extras = {"stage1_loss": result.metrics["stage1_loss"],
                  "stage2_loss": result.metrics["stage2_loss"]}
    elapsed = time.perf_counter() - start
    wall_ms = int(round(elapsed * 1000)) if spec.record_wall_time else 0
    row = ResultRow(cell.task, cell.ratio, cell.shots, cell.loss, cell.method,
                    seeds["inversion"], cell.image_id, result.metrics["psnr"], wall_ms)
    return row, result.reconstruction, extras


def _job(spec_dict, cell, truth):
    spec = ExperimentSpec.from_dict(spec_dict)
    try:
        return cell, execute_cell(spec, cell, truth), None
    except NumericError as exc:
        return cell, None, str(exc)


def recon_path(output_dir, key):
    return os.path.join(output_dir, "recon", hashlib.sha256(key.encode()).hexdigest()[:16] + ".npy")


# -- sweep driver ----------------------------------------------------------


@dataclass
class SweepOutcome:
    rows: list
    cells: list
    failed: dict
    output_dir: str
    extras: dict

    @property
    def complete(self):
        return not self.failed and len(self.rows) == len(self.cells)


def check_checkpoints(spec):
    digests = {}
    for s in spec.shots:
        for loss in spec.losses:
            path = spec.checkpoint_path(s, loss)
            if not os.path.exists(path):
                raise ConfigError(f"missing checkpoint for S={s}, loss={loss}: {path}")
            load_checkpoint(path, expected=spec.descriptor)
            digests[f"{loss}_S{s}"] = file_digest(path)
    return digests


def _manifest(spec, dataset, digests, cells):
    return {
        "spec": spec.to_dict(),
        "dataset": dataset.manifest.to_dict(),
        "checkpoints": digests,
        "cells": {c.key: c.seeds(spec.seed) for c in cells},
    }


def _write_json(path, obj):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def read_cell_log(output_dir):
    out = {}
    path = os.path.join(output_dir, CELL_LOG)
    if os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue
                out[rec["key"]] = rec
    return out


def run_sweep(spec, max_new_cells=None, workers=None, dataset=None):
    """Run (or resume) every cell of ``spec``; see the module docstring."""
    if dataset is None:
        dataset = load_dataset(spec.data_directory, spec.descriptor.resolution, spec.n_test,
                               spec.test_directory)
    if dataset.test_images.shape[1:] != spec.descriptor.image_shape:
        raise ConfigError("test images do not match the model resolution")
    digests = check_checkpoints(spec)
    cells = plan_cells(spec, dataset.test_ids)
    out = spec.output_dir
    os.makedirs(os.path.join(out, "recon"), exist_ok=True)

    manifest = _manifest(spec, dataset, digests, cells)
    mpath = os.path.join(out, MANIFEST)
    if os.path.exists(mpath):
        with open(mpath) as fh:
            previous = json.load(fh)
        if previous != json.loads(json.dumps(manifest)):
            raise ConfigError(f"{out} holds results of a different sweep; use a fresh output_dir")
    else:
        _write_json(mpath, manifest)

    csv_path = os.path.join(out, RESULTS)
    order = {c.key: i for i, c in enumerate(cells)}
    done = {k: r for k, r in read_rows(csv_path).items() if k in order}
    write_rows(csv_path, sorted(done.values(), key=lambda r: order[r.key]))

    pending = [c for c in cells if c.key not in done]
    if max_new_cells is not None:
        pending = pending[:max_new_cells]
    truths = dict(zip(dataset.test_ids, dataset.test_images))
    failed = {}
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))

    with open(csv_path, "a", newline="") as fh, open(os.path.join(out, CELL_LOG), "a") as logf:

        def record(cell, payload, error):
            if error is not None:
                log.error("cell %s failed: %s", cell.key, error)
                failed[cell.key] = error
                return
            row, recon, extras = payload
            np.save(recon_path(out, cell.key), recon)
            logf.write(json.dumps({"key": cell.key, **extras}, sort_keys=True) + "\n")
            logf.flush()
            fh.write(_csv_line(row.fields()))
            fh.flush()
            done[cell.key] = row
            log.info("%s psnr=%.2f", cell.key, row.psnr)

        if workers <= 1:
            spec_dict = spec.to_dict()
            for cell in pending:
                record(*_job(spec_dict, cell, truths[cell.image_id]))
        else:
            spec_dict = spec.to_dict()
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_job, spec_dict, c, truths[c.image_id]) for c in pending]
                for fut in as_completed(futures):
                    record(*fut.result())

    rows = sorted(done.values(), key=lambda r: order[r.key])
    outcome = SweepOutcome(rows, cells, failed, out, read_cell_log(out))
    if outcome.complete:
        write_rows(csv_path, rows)
        write_summary(os.path.join(out, SUMMARY), rows)
    return outcome


def replay_cell(output_dir, key):
    """Re-execute one recorded cell from ``manifest.json``; returns the new row."""
    with open(os.path.join(output_dir, MANIFEST)) as fh:
        manifest = json.load(fh)
    if key not in manifest["cells"]:
        raise ConfigError(f"no cell {key!r} in {output_dir}")
    spec = ExperimentSpec.from_dict(manifest["spec"])
    task, ratio, shots, loss, method, image_id = key.split("|")
    cell = Cell(task, float(ratio), int(shots), loss, method, image_id)
    if cell.seeds(spec.seed) != manifest["cells"][key]:
        raise ConfigError("recorded seeds do not match the derivation; manifest is inconsistent")
    record = next((r for r in manifest["dataset"]["test"] if r["digest"].startswith(image_id)), None)
    if record is None:
        raise ConfigError(f"image {image_id} not listed in the manifest")
    with open(record["path"], "rb") as fh:
        if hashlib.sha256(fh.read()).hexdigest() != record["digest"]:
            raise ConfigError(f"{record['path']} changed since the sweep ran")
    if method == "lowshot":
        path = spec.checkpoint_path(cell.shots, cell.loss)
        if file_digest(path) != manifest["checkpoints"][f"{loss}_S{shots}"]:
            raise ConfigError(f"checkpoint {path} changed since the sweep ran")
    truth = load_image(record["path"], spec.descriptor.resolution)
    row, _, _ = execute_cell(spec, cell, truth)
    return row
