"""Command-line entry point: ``cranio <command> ...``.

Exit codes: 0 success, 1 usage error, 2 unreadable/invalid input,
3 processing failure (any failed subject; with ``--strict`` also any
degraded subject).
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import cohort, morphometry, phantoms, stats
from .errors import CranioError, NiftiFormatError
from .nifti import read_labels, read_volume, write_volume
from .roi import apply_crop, crop_pipeline
from .volume import (
    FAT,
    LabelVolume,
    canonicalize,
    canonicalize_labels,
)

EXIT_USAGE, EXIT_INPUT, EXIT_PROCESSING = 1, 2, 3

log = logging.getLogger("cranio")


class Failure(Exception):
    def __init__(self, code: int, record: dict):
        super().__init__(record.get("message", ""))
        self.exit_code = code
        self.record = record


def _fail(exc: Exception) -> Failure:
    code = getattr(exc, "code", "io")
    exit_code = EXIT_INPUT if isinstance(exc, (NiftiFormatError, OSError, EOFError)) else EXIT_PROCESSING
    return Failure(exit_code, {"error": code, "message": str(exc)})


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("CRANIO_JOBS", "1")))
    except ValueError:
        return 1


jobs_option = click.option("--jobs", "-j", type=click.IntRange(min=1), default=_default_jobs,
                           show_default="$CRANIO_JOBS or 1", help="Subjects processed concurrently.")
strict_option = click.option("--strict", is_flag=True, help="Treat degraded subjects as failures.")
out_option = click.option("--out", "-o", "out", required=True, type=click.Path(dir_okay=False),
                          help="Output prefix; writes PREFIX.csv and PREFIX.json.")


def _finish(report: cohort.Report, out, strict: bool) -> None:
    csv_path, json_path = report.write(out)
    for w in report.warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(f"wrote {csv_path} and {json_path}", err=True)
    if report.failed or (strict and report.degraded):
        raise Failure(EXIT_PROCESSING, {
            "error": "subjects-failed",
            "message": f"{report.failed} failed, {report.degraded} degraded",
        })
    if report.degraded:
        click.echo(f"warning: {report.degraded} subject(s) degraded", err=True)


def _manifest(path, pairs: bool = False):
    try:
        return cohort.read_pairs(path) if pairs else cohort.read_manifest(path)
    except CranioError as exc:
        raise _fail(exc) from exc


@click.group()
@click.option("-v", "--verbose", count=True)
def cli(verbose):
    """Extracranial tissue morphometry on labelled head volumes."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")


def _sidecar(path: Path) -> Path:
    name = path.name
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            name = name[: -len(ext)]
            break
    return path.with_name(name + ".boundary.txt")


@cli.command("crop")
@click.argument("labels_in", type=click.Path(exists=True, dir_okay=False))
@click.argument("labels_out", type=click.Path(dir_okay=False))
@click.option("--allow-empty-brain", is_flag=True,
              help="Crop every slice at row 0 instead of failing when there is no brain.")
@click.option("--also-crop", nargs=2, type=click.Path(), default=None,
              metavar="INTENSITY_IN INTENSITY_OUT", help="Apply the same boundary to an intensity volume.")
def crop_cmd(labels_in, labels_out, allow_empty_brain, also_crop):
    """Brain-anchored anterior crop of a label volume.

    Output volumes are written in the canonical (anterior, right, superior)
    orientation, next to a sidecar listing the cut-off row of every slice.
    """
    try:
        labels = canonicalize_labels(read_labels(labels_in))
        cropped, boundary = crop_pipeline(labels, allow_empty_brain=allow_empty_brain)
        intensity = None
        if also_crop:
            intensity = canonicalize(read_volume(also_crop[0]))
            intensity = apply_crop(intensity, boundary)
    except (CranioError, OSError, EOFError) as exc:
        raise _fail(exc) from exc
    out = Path(labels_out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_volume(cropped, out)
        _sidecar(out).write_text(boundary.to_text())
        if intensity is not None:
            Path(also_crop[1]).parent.mkdir(parents=True, exist_ok=True)
            write_volume(intensity, also_crop[1])
    except OSError as exc:
        raise Failure(EXIT_PROCESSING, {"error": "io", "message": str(exc)}) from exc
    removed = int(np.count_nonzero(labels.data) - np.count_nonzero(cropped.data))
    click.echo(json.dumps({"output": str(out), "boundary": str(_sidecar(out)),
                           "removed_voxels": removed}, sort_keys=True))


@cli.command("volumes")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@out_option
@click.option("--no-crop", is_flag=True, help="Measure the uncropped label volumes.")
@jobs_option
@strict_option
def volumes_cmd(manifest, out, no_crop, jobs, strict):
    """Per-subject tissue volumes (mm^3 and cm^3) with cohort median/IQR."""
    records = _manifest(manifest)
    options = {"crop": not no_crop}
    _finish(cohort.run_volumes(records, options, jobs), out, strict)


@cli.command("thickness")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@out_option
@click.option("--threshold-hu", type=float, default=morphometry.DEFAULT_HU_THRESHOLD, show_default=True)
@click.option("--n-points", type=click.IntRange(min=1), default=morphometry.N_POINTS, show_default=True)
@click.option("--n-slices", type=click.IntRange(min=1), default=morphometry.N_SLICES, show_default=True)
@click.option("--offset-mm", type=float, default=morphometry.SLAB_OFFSET_MM, show_default=True)
@click.option("--trim", nargs=2, type=float, default=morphometry.TRIM_PERCENTILES, show_default=True)
@click.option("--pooling", type=click.Choice(["pooled", "per_slice"]), default="pooled", show_default=True)
@click.option("--method", type=click.Choice(["normal", "nearest"]), default="normal", show_default=True)
@click.option("--resample", is_flag=True, help="Resample non-1 mm inputs to 1 mm before measuring.")
@jobs_option
@strict_option
def thickness_cmd(manifest, out, threshold_hu, n_points, n_slices, offset_mm, trim, pooling,
                  method, resample, jobs, strict):
    """Median skull thickness from label (and optional CT) volumes."""
    records = _manifest(manifest)
    options = {"threshold_hu": threshold_hu, "n_points": n_points, "n_slices": n_slices,
               "offset_mm": offset_mm, "trim": list(trim), "pooling": pooling,
               "method": method, "resample": resample}
    _finish(cohort.run_thickness(records, options, jobs), out, strict)


@cli.command("compare")
@click.argument("pairs", type=click.Path(exists=True, dir_okay=False))
@out_option
@jobs_option
@strict_option
def compare_cmd(pairs, out, jobs, strict):
    """Dice and HD95 per tissue for prediction/reference pairs."""
    records = _manifest(pairs, pairs=True)
    _finish(cohort.run_compare(records, {}, jobs), out, strict)


@cli.command("ablate")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@out_option
@click.option("--pitch", type=click.FloatRange(0, 30), default=5.0, show_default=True)
@jobs_option
@strict_option
def ablate_cmd(manifest, out, pitch, jobs, strict):
    """Volume change under +/- pitch head rotations, with FDR-adjusted tests."""
    records = _manifest(manifest)
    _finish(cohort.run_ablate(records, {"pitch": pitch}, jobs), out, strict)


@cli.command("agree")
@click.argument("ratings", type=click.Path(exists=True, dir_okay=False))
@out_option
@click.option("--raters", default=None, help="Comma-separated rater columns (default: all non-meta columns).")
def agree_cmd(ratings, out, raters):
    """Gwet AC1 with 95% CI on binned acceptability ratings."""
    options = {"raters": raters.split(",") if raters else None, "binning": dict(stats.LIKERT_BINS)}
    try:
        report = cohort.run_agree(ratings, options)
    except CranioError as exc:
        raise _fail(exc) from exc
    for r in report.document["rejected"]:
        click.echo(f"rejected {r['item']}: {r['message']}", err=True)
    _finish(report, out, False)


@cli.command("regress")
@click.argument("table", type=click.Path(exists=True, dir_okay=False))
@out_option
@click.option("--outcome", required=True)
@click.option("--predictors", required=True, help="Comma-separated predictor columns.")
@click.option("--box-cox-lambda", type=float, default=stats.DEFAULT_LAMBDA, show_default=True)
@click.option("--no-box-cox", is_flag=True, help="Use the raw outcome.")
def regress_cmd(table, out, outcome, predictors, box_cox_lambda, no_box_cox):
    """Univariable and multivariable OLS with CIs, p-values and VIF."""
    options = {"outcome": outcome, "predictors": [p.strip() for p in predictors.split(",") if p.strip()],
               "box_cox_lambda": None if no_box_cox else box_cox_lambda}
    try:
        report = cohort.run_regress(table, options)
    except CranioError as exc:
        raise _fail(exc) from exc
    _finish(report, out, False)


@cli.command("phantom")
@click.argument("outdir", type=click.Path(file_okay=False))
@click.option("--n", "n_subjects", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def phantom_cmd(outdir, n_subjects, seed):
    """Write a synthetic cohort: labels, CT, predictions, manifests and ratings."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ["id,labels,ct,brain_mask,reference_slice"]
    pairs = ["id,prediction,reference"]
    for i, labels in enumerate(phantoms.jittered_heads(n_subjects, seed)):
        sid = f"sub-{i + 1:02d}"
        write_volume(labels, out / f"{sid}_labels.nii.gz")
        write_volume(phantoms.ct_from_labels(labels), out / f"{sid}_ct.nii.gz")
        # prediction: the fat layer shifted 1 voxel anteriorly
        pred = labels.data.copy()
        fat = pred == FAT
        pred[fat] = 0
        pred[np.roll(fat, 1, axis=0) & (pred == 0)] = FAT
        write_volume(LabelVolume(labels.grid.with_data(pred), labels.codebook), out / f"{sid}_pred.nii.gz")
        ref = phantoms.brain_center_slice(labels) - 10
        manifest.append(f"{sid},{sid}_labels.nii.gz,{sid}_ct.nii.gz,,{ref}")
        pairs.append(f"{sid},{sid}_pred.nii.gz,{sid}_labels.nii.gz")
    (out / "manifest.csv").write_text("\n".join(manifest) + "\n")
    (out / "pairs.csv").write_text("\n".join(pairs) + "\n")
    (out / "ratings.csv").write_text(phantoms.ratings_table(60, seed))
    click.echo(str(out / "manifest.csv"))


def main(argv=None) -> int:
    """Run the CLI and return its exit status instead of raising SystemExit."""
    try:
        cli.main(args=argv, prog_name="cranio", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except Failure as exc:
        click.echo(json.dumps(exc.record, sort_keys=True), err=True)
        return exc.exit_code
    except CranioError as exc:
        failure = _fail(exc)
        click.echo(json.dumps(failure.record, sort_keys=True), err=True)
        return failure.exit_code
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
