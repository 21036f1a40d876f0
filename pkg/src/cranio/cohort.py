"""Manifest handling and per-subject batch processing behind the CLI.

Each ``run_*`` function takes parsed inputs plus an options dict and returns
a ``Report``: CSV rows for the table output and a JSON-ready document.
Subjects may be processed concurrently; results are always merged in
manifest order so reports do not depend on scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import metrics, morphometry, stats
from .errors import CranioError, NiftiFormatError, RatingError
from .nifti import read_labels, read_volume
from .roi import brain_boundary, top_points
from .volume import (
    BACKGROUND,
    SKULL,
    VoxelGrid,
    canonicalize,
    canonicalize_labels,
    resample_isotropic,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST_COLUMNS = ("id", "labels", "ct", "brain_mask", "reference_slice")
PAIRS_COLUMNS = ("id", "prediction", "reference")

OK, DEGRADED, FAILED = "ok", "degraded", "failed"


class ManifestError(NiftiFormatError):
    code = "manifest"


# ---------------------------------------------------------------------------
# formatting helpers
# ---------------------------------------------------------------------------

def fmt(value, places: int) -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return ""
    return f"{value:.{places}f}"


def fmt_g(value) -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return ""
    return f"{value:.6g}"


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def median_iqr(values) -> dict:
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return {"n": 0, "median": None, "q1": None, "q3": None}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"n": int(v.size), "median": float(med), "q1": float(q1), "q3": float(q3)}


@dataclass
class Report:
    command: str
    header: list[str]
    rows: list[list[str]]
    document: dict
    failed: int = 0
    degraded: int = 0
    warnings: list[str] = field(default_factory=list)

    def csv_text(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return out.getvalue()

    def json_text(self) -> str:
        return json.dumps(_clean(self.document), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def write(self, prefix) -> tuple[Path, Path]:
        prefix = Path(prefix)
        if prefix.parent and not prefix.parent.exists():
            prefix.parent.mkdir(parents=True, exist_ok=True)
        csv_path = prefix.with_name(prefix.name + ".csv")
        json_path = prefix.with_name(prefix.name + ".json")
        csv_path.write_text(self.csv_text())
        json_path.write_text(self.json_text())
        return csv_path, json_path


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _document(command: str, options: dict, inputs: dict, **body) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "options": dict(options),
            "inputs": dict(sorted(inputs.items())), **body}


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class SubjectRecord:
    id: str
    labels: Path | None = None
    ct: Path | None = None
    brain_mask: Path | None = None
    reference_slice: int | None = None
    extra: dict = field(default_factory=dict)


def _read_table(path) -> tuple[list[str], list[dict]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read {path}: {exc}") from exc
    sample = text[:4096]
    delimiter = "\t" if sample.count("\t") > sample.count(",") else ","
    reader = csv.DictReader(text.splitlines(), delimiter=delimiter)
    if reader.fieldnames is None:
        return [], []
    fields = [f.strip() for f in reader.fieldnames]
    rows = [{k.strip(): (v or "").strip() for k, v in r.items() if k is not None} for r in reader]
    return fields, rows


def read_manifest(path, required=("id", "labels"), columns=MANIFEST_COLUMNS) -> list[SubjectRecord]:
    """Parse a subject manifest; paths are resolved against its directory."""
    path = Path(path)
    fields, rows = _read_table(path)
    if not fields and not rows:
        return []
    missing = [c for c in required if c not in fields]
    if missing:
        raise ManifestError(f"{path} is missing columns {missing}")
    base = path.parent
    seen = set()
    out = []
    for i, row in enumerate(rows, start=2):
        sid = row.get("id", "")
        if not sid:
            raise ManifestError(f"{path}:{i}: empty subject id")
        if sid in seen:
            raise ManifestError(f"{path}:{i}: duplicate subject id {sid!r}")
        seen.add(sid)
        rec = SubjectRecord(sid)
        for col in columns:
            if col == "id":
                continue
            val = row.get(col, "")
            if col == "reference_slice":
                if val:
                    try:
                        rec.reference_slice = int(val)
                    except ValueError as exc:
                        raise ManifestError(f"{path}:{i}: reference_slice {val!r} is not an integer") from exc
            elif col in ("labels", "ct", "brain_mask"):
                setattr(rec, col, (base / val) if val else None)
            else:
                rec.extra[col] = (base / val) if val else None
        out.append(rec)
    return out


def read_pairs(path) -> list[SubjectRecord]:
    return read_manifest(path, required=PAIRS_COLUMNS, columns=PAIRS_COLUMNS)


def _digests(records, keys) -> dict:
    out = {}
    for rec in records:
        for key in keys:
            p = getattr(rec, key, None) if key in ("labels", "ct", "brain_mask") else rec.extra.get(key)
            if p is not None and Path(p).is_file():
                out[f"{rec.id}:{key}"] = sha256(p)
    return out


def map_subjects(fn: Callable, records, jobs: int = 1) -> list:
    """Apply ``fn`` to each record, concurrently if ``jobs > 1``, in order."""
    if jobs <= 1 or len(records) <= 1:
        return [fn(r) for r in records]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, records))


def _guard(fn: Callable[[SubjectRecord], dict]) -> Callable[[SubjectRecord], dict]:
    def run(rec: SubjectRecord) -> dict:
        try:
            return fn(rec)
        except (CranioError, OSError, EOFError) as exc:
            code = getattr(exc, "code", "io")
            log.warning("subject %s failed: %s", rec.id, exc)
            return {"id": rec.id, "status": FAILED, "reason": f"{code}: {exc}"}
    return run


def _count(results) -> tuple[int, int]:
    return (sum(r["status"] == FAILED for r in results),
            sum(r["status"] == DEGRADED for r in results))


def _load_labels(path):
    if path is None:
        raise CranioError("no label volume given")
    return canonicalize_labels(read_labels(path))


def _boundary(rec: SubjectRecord, labels, allow_empty_brain: bool = False):
    if rec.brain_mask is not None:
        mask = canonicalize(read_volume(rec.brain_mask, apply_scaling=False))
        if mask.dims != labels.dims:
            raise CranioError(f"brain mask shape {mask.dims} differs from labels {labels.dims}")
        return top_points((mask.data != 0).astype(np.uint8))
    return brain_boundary(labels, allow_empty_brain)


# ---------------------------------------------------------------------------
# volumes
# ---------------------------------------------------------------------------

def run_volumes(records, options: dict, jobs: int = 1) -> Report:
    crop = options.get("crop", True)

    @_guard
    def one(rec):
        labels = _load_labels(rec.labels)
        boundary = _boundary(rec, labels) if crop else None
        rep = morphometry.volumes(labels, boundary)
        vols = {name: {"voxels": rep.counts[name], "mm3": rep.volume_mm3[name], "cm3": rep.volume_cm3[name]}
                for code, name in sorted(labels.codebook.items()) if code != BACKGROUND}
        return {"id": rec.id, "status": OK, "reason": "", "cropped": rep.cropped,
                "spacing": list(rep.spacing), "volumes": vols}

    results = map_subjects(one, records, jobs)
    header = ["id", "status", "tissue", "voxels", "volume_mm3", "volume_cm3", "reason"]
    rows = []
    tissues: list[str] = []
    for r in results:
        if r["status"] == FAILED:
            rows.append([r["id"], r["status"], "", "", "", "", r["reason"]])
            continue
        for name, v in r["volumes"].items():
            if name not in tissues:
                tissues.append(name)
            rows.append([r["id"], r["status"], name, str(v["voxels"]), fmt(v["mm3"], 2), fmt(v["cm3"], 3), ""])

    cohort = {}
    for name in tissues:
        vals = [r["volumes"][name]["mm3"] for r in results if r["status"] != FAILED]
        s = median_iqr(vals)
        cohort[name] = {"n": s["n"], "median_mm3": s["median"], "q1_mm3": s["q1"], "q3_mm3": s["q3"]}
        for stat in ("median", "q1", "q3"):
            mm3 = s[stat]
            rows.append([f"cohort-{stat}", "summary", name, "", fmt(mm3, 2),
                         fmt(None if mm3 is None else mm3 / 1000.0, 3), ""])

    failed, degraded = _count(results)
    warnings = [] if records else ["manifest lists no subjects"]
    doc = _document("volumes", options, _digests(records, ("labels", "brain_mask")),
                    subjects=results, cohort=cohort, warnings=warnings)
    return Report("volumes", header, rows, doc, failed, degraded, warnings)


# ---------------------------------------------------------------------------
# thickness
# ---------------------------------------------------------------------------

def _thickness_of(mask: VoxelGrid, ref: int, options: dict) -> morphometry.ThicknessEstimate:
    if options.get("resample") and not np.allclose(mask.spacing, 1.0, atol=1e-3):
        mask = resample_isotropic(mask, 1.0, "nearest")
    return morphometry.thickness_pipeline(
        mask, ref,
        n_points=options["n_points"],
        n_slices=options["n_slices"],
        offset_mm=options["offset_mm"],
        trim=tuple(options["trim"]),
        pooling=options["pooling"],
        method=options["method"],
    )


def _estimate_doc(est: morphometry.ThicknessEstimate) -> dict:
    return {
        "median_mm": est.median_mm,
        "start_slice": est.start_slice,
        "slices_used": est.n_usable,
        "samples": int(est.raw_pool.size),
        "trimmed_samples": int(est.trimmed_pool.size),
        "skipped": {str(k): v for k, v in sorted(est.skipped.items())},
        "degraded": est.degraded,
    }


def run_thickness(records, options: dict, jobs: int = 1) -> Report:
    @_guard
    def one(rec):
        if rec.reference_slice is None:
            return {"id": rec.id, "status": FAILED, "reason": "missing-reference-slice"}
        labels = _load_labels(rec.labels)
        mri = _thickness_of(labels.grid.with_data((labels.data == SKULL).astype(np.uint8)),
                            rec.reference_slice, options)
        out = {"id": rec.id, "status": DEGRADED if mri.degraded else OK, "reason": "",
               "mri": _estimate_doc(mri), "ct": None, "abs_difference_mm": None}
        if rec.ct is not None:
            ct = canonicalize(read_volume(rec.ct))
            bone = morphometry.hu_bone_mask(ct, options["threshold_hu"])
            cte = _thickness_of(bone, rec.reference_slice, options)
            out["ct"] = _estimate_doc(cte)
            out["abs_difference_mm"] = abs(mri.median_mm - cte.median_mm)
            if cte.degraded:
                out["status"] = DEGRADED
        if out["status"] == DEGRADED:
            out["reason"] = "fewer than the full slab of usable slices"
        return out

    results = map_subjects(one, records, jobs)
    header = ["id", "status", "mri_thickness_mm", "ct_thickness_mm", "abs_difference_mm",
              "mri_slices_used", "ct_slices_used", "reason"]
    rows = []
    for r in results:
        if r["status"] == FAILED:
            rows.append([r["id"], r["status"], "", "", "", "", "", r["reason"]])
            continue
        ct = r["ct"]
        rows.append([
            r["id"], r["status"], fmt(r["mri"]["median_mm"], 2),
            fmt(ct["median_mm"], 2) if ct else "", fmt(r["abs_difference_mm"], 2),
            str(r["mri"]["slices_used"]), str(ct["slices_used"]) if ct else "", r["reason"],
        ])

    good = [r for r in results if r["status"] != FAILED]
    mri_vals = [r["mri"]["median_mm"] for r in good]
    paired = [(r["mri"]["median_mm"], r["ct"]["median_mm"]) for r in good if r["ct"]]

    def mean_sd(v):
        v = np.asarray(v, dtype=np.float64)
        if v.size == 0:
            return {"n": 0, "mean": None, "sd": None}
        return {"n": int(v.size), "mean": float(v.mean()), "sd": float(v.std(ddof=1)) if v.size > 1 else None}

    summary = {"mri": mean_sd(mri_vals)}
    if paired:
        summary["ct"] = mean_sd([p[1] for p in paired])
        summary["abs_difference"] = mean_sd([abs(a - b) for a, b in paired])
        if len(paired) >= 2:
            ba = metrics.bland_altman([p[0] for p in paired], [p[1] for p in paired])
            summary["bland_altman"] = {"bias_mm": ba.bias, "sd_mm": ba.sd, "loa_low_mm": ba.loa_low,
                                       "loa_high_mm": ba.loa_high, "n": ba.n}
        else:
            summary["bland_altman"] = {"status": "insufficient-n", "n": len(paired)}
    for key in ("mri", "ct", "abs_difference"):
        if key in summary:
            s = summary[key]
            rows.append([f"cohort-{key}", "summary", fmt(s["mean"], 2) if key == "mri" else "",
                         fmt(s["mean"], 2) if key == "ct" else "",
                         fmt(s["mean"], 2) if key == "abs_difference" else "", "", "",
                         f"mean; sd={fmt(s['sd'], 2)}"])
    ba = summary.get("bland_altman")
    if ba and "bias_mm" in ba:
        rows.append(["cohort-bland-altman", "summary", "", "", fmt(ba["bias_mm"], 2), "", "",
                     f"bias; loa=[{fmt(ba['loa_low_mm'], 2)}, {fmt(ba['loa_high_mm'], 2)}]"])

    failed, degraded = _count(results)
    warnings = [] if records else ["manifest lists no subjects"]
    doc = _document("thickness", options, _digests(records, ("labels", "ct")),
                    subjects=results, summary=summary, warnings=warnings)
    return Report("thickness", header, rows, doc, failed, degraded, warnings)


# ---------------------------------------------------------------------------
# segmentation comparison
# ---------------------------------------------------------------------------

def run_compare(records, options: dict, jobs: int = 1) -> Report:
    @_guard
    def one(rec):
        pred = _load_labels(rec.extra.get("prediction"))
        ref = _load_labels(rec.extra.get("reference"))
        rep = metrics.compare(pred, ref)
        classes = {c.name: {"dice": c.dice, "hd95_mm": c.hd95_mm, "both_empty": c.both_empty}
                   for c in rep.classes}
        return {"id": rec.id, "status": OK, "reason": "", "classes": classes,
                "overall_dice": rep.overall_dice, "empty_classes": rep.empty_classes}

    results = map_subjects(one, records, jobs)
    header = ["id", "status", "tissue", "dice", "hd95_mm", "reason"]
    rows = []
    names: list[str] = []
    for r in results:
        if r["status"] == FAILED:
            rows.append([r["id"], r["status"], "", "", "", r["reason"]])
            continue
        for name, c in r["classes"].items():
            if name not in names:
                names.append(name)
            note = "both-empty" if c["both_empty"] else ("hd95-undefined" if c["hd95_mm"] is None else "")
            rows.append([r["id"], r["status"], name, fmt(c["dice"], 3), fmt(c["hd95_mm"], 2), note])
        rows.append([r["id"], r["status"], "overall", fmt(r["overall_dice"], 3), "", ""])

    good = [r for r in results if r["status"] != FAILED]
    summary = {}
    for name in names:
        dice_vals = [r["classes"][name]["dice"] for r in good if not r["classes"][name]["both_empty"]]
        hd_vals = [r["classes"][name]["hd95_mm"] for r in good]
        summary[name] = {"dice": median_iqr(dice_vals), "hd95_mm": median_iqr(hd_vals)}
    summary["overall"] = {"dice": median_iqr([r["overall_dice"] for r in good])}
    for name, s in summary.items():
        d = s["dice"]
        h = s.get("hd95_mm")
        rows.append(["cohort-median-iqr", "summary", name,
                     f"{fmt(d['median'], 3)} [{fmt(d['q1'], 3)}-{fmt(d['q3'], 3)}]" if d["n"] else "",
                     f"{fmt(h['median'], 2)} [{fmt(h['q1'], 2)}-{fmt(h['q3'], 2)}]" if h and h["n"] else "",
                     ""])

    failed, degraded = _count(results)
    warnings = [] if records else ["manifest lists no subjects"]
    doc = _document("compare", options, _digests(records, ("prediction", "reference")),
                    subjects=results, summary=summary, warnings=warnings)
    return Report("compare", header, rows, doc, failed, degraded, warnings)


# ---------------------------------------------------------------------------
# tilt ablation
# ---------------------------------------------------------------------------

def run_ablate(records, options: dict, jobs: int = 1) -> Report:
    pitch = float(options["pitch"])

    @_guard
    def one(rec):
        labels = _load_labels(rec.labels)
        rep = morphometry.tilt_ablation(labels, pitch_deg=pitch)
        rows = [{"pitch_deg": r.pitch_deg, "tissue": r.tissue, "volume0_mm3": r.volume0_mm3,
                 "volume_mm3": r.volume_mm3, "abs_delta_mm3": r.abs_delta_mm3,
                 "percent_delta": r.percent_delta} for r in rep.rows]
        return {"id": rec.id, "status": OK, "reason": "", "rows": rows}

    results = map_subjects(one, records, jobs)
    header = ["id", "status", "pitch_deg", "tissue", "volume0_mm3", "volume_mm3",
              "abs_delta_mm3", "percent_delta", "reason"]
    rows = []
    for r in results:
        if r["status"] == FAILED:
            rows.append([r["id"], r["status"], "", "", "", "", "", "", r["reason"]])
            continue
        for t in r["rows"]:
            rows.append([r["id"], r["status"], fmt(t["pitch_deg"], 1), t["tissue"],
                         fmt(t["volume0_mm3"], 2), fmt(t["volume_mm3"], 2),
                         fmt(t["abs_delta_mm3"], 2), fmt(t["percent_delta"], 2), ""])

    good = [r for r in results if r["status"] != FAILED]
    tests = []
    if good:
        keys = [(t["pitch_deg"], t["tissue"]) for t in good[0]["rows"] if t["pitch_deg"] != 0]
        for pitch_deg, tissue in keys:
            base, tilted = [], []
            for r in good:
                for t in r["rows"]:
                    if t["pitch_deg"] == pitch_deg and t["tissue"] == tissue:
                        base.append(t["volume0_mm3"])
                        tilted.append(t["volume_mm3"])
            entry = {"pitch_deg": pitch_deg, "tissue": tissue, "n": len(base)}
            if len(base) < 2:
                entry.update(status="insufficient-n", u=None, p=None)
            else:
                mw = stats.mann_whitney_u(tilted, base)
                entry.update(status="ok", u=mw.u, p=mw.p, method=mw.method)
            tests.append(entry)
        ps = [t["p"] for t in tests if t["p"] is not None]
        adj = iter(stats.fdr_adjust(ps)) if ps else iter(())
        for t in tests:
            t["p_fdr"] = next(adj) if t["p"] is not None else None
    for t in tests:
        rows.append(["cohort-test", "summary", fmt(t["pitch_deg"], 1), t["tissue"], "", "", "", "",
                     "insufficient-n" if t["p"] is None else f"p={fmt_g(t['p'])}; p_fdr={fmt_g(t['p_fdr'])}"])

    failed, degraded = _count(results)
    warnings = [] if records else ["manifest lists no subjects"]
    doc = _document("ablate", options, _digests(records, ("labels",)),
                    subjects=results, tests=tests, fdr_method="benjamini-hochberg", warnings=warnings)
    return Report("ablate", header, rows, doc, failed, degraded, warnings)


# ---------------------------------------------------------------------------
# inter-rater agreement
# ---------------------------------------------------------------------------

def run_agree(path, options: dict) -> Report:
    """AC1 per (health status, tissue class, rater pair) from a wide ratings table.

    Columns: an item id (``item`` or ``id``), optional ``health_status`` and
    ``tissue_class``, and one column of 1..5 scores per rater.
    """
    fields, rows_in = _read_table(path)
    if not fields:
        raise ManifestError(f"{path} has no header row")
    meta = {"item", "id", "health_status", "tissue_class"}
    raters = options.get("raters") or [f for f in fields if f not in meta]
    missing = [r for r in raters if r not in fields]
    if missing:
        raise ManifestError(f"rater columns {missing} not in {path}")
    if len(raters) < 2:
        raise ManifestError("need at least two rater columns")

    rejected, accepted = [], []
    for i, row in enumerate(rows_in, start=2):
        try:
            binned = {}
            for r in raters:
                cell = row.get(r, "")
                binned[r] = None if cell == "" else stats.bin_likert([cell])[0]
        except RatingError as exc:
            item = row.get("item") or row.get("id") or f"line {i}"
            rejected.append({"line": i, "item": item, "message": str(exc)})
            log.warning("rejected ratings row %s: %s", item, exc)
            continue
        accepted.append((row.get("health_status") or "all", row.get("tissue_class") or "all", binned))

    statuses = sorted({a[0] for a in accepted})
    tissues = sorted({a[1] for a in accepted})
    strata = []
    for a, b in itertools.combinations(raters, 2):
        for hs in statuses:
            for tc in tissues + (["Overall"] if len(tissues) > 1 else []):
                sel = [x[2] for x in accepted if x[0] == hs and (tc == "Overall" or x[1] == tc)]
                entry = {"health_status": hs, "tissue_class": tc, "rater_pair": f"{a}-{b}"}
                try:
                    table = stats.AgreementTable.from_pairs([s[a] for s in sel], [s[b] for s in sel])
                    entry.update(n_items=table.n_items, dropped=table.dropped)
                    res = stats.gwet_ac1(table)
                    entry.update(status="ok", ac1=res.ac1, ci_low=res.ci_low, ci_high=res.ci_high,
                                 pa=res.pa, pe=res.pe)
                except CranioError as exc:
                    entry.setdefault("n_items", len(sel))
                    entry.update(status=exc.code, ac1=None, ci_low=None, ci_high=None)
                strata.append(entry)

    header = ["health_status", "tissue_class", "rater_pair", "n_items", "dropped",
              "ac1", "ci_low", "ci_high", "status"]
    rows = [[s["health_status"], s["tissue_class"], s["rater_pair"], str(s["n_items"]),
             str(s.get("dropped", "")), fmt(s["ac1"], 3), fmt(s["ci_low"], 3), fmt(s["ci_high"], 3),
             s["status"]] for s in strata]
    warnings = [f"rejected {len(rejected)} row(s) with invalid ratings"] if rejected else []
    doc = _document("agree", options, {os.path.basename(str(path)): sha256(path)},
                    strata=strata, rejected=rejected, raters=list(raters), warnings=warnings)
    return Report("agree", header, rows, doc, 0, 0, warnings)


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

def _design_column(name: str, values: list[str]) -> tuple[list[str], np.ndarray]:
    try:
        return [name], np.array([float(v) for v in values])[:, None]
    except ValueError:
        levels = sorted(set(values))
        if len(levels) != 2:
            raise ManifestError(f"column {name!r} is neither numeric nor two-level categorical")
        return [f"{name}[{levels[1]}]"], np.array([[1.0 if v == levels[1] else 0.0] for v in values])


def run_regress(path, options: dict) -> Report:
    fields, rows_in = _read_table(path)
    outcome = options["outcome"]
    predictors = list(options["predictors"])
    missing = [c for c in [outcome, *predictors] if c not in fields]
    if missing:
        raise ManifestError(f"columns {missing} not in {path}")
    used = [r for r in rows_in if all(r.get(c, "") != "" for c in [outcome, *predictors])]
    dropped = len(rows_in) - len(used)
    try:
        y = np.array([float(r[outcome]) for r in used])
    except ValueError as exc:
        raise ManifestError(f"outcome column {outcome!r} is not numeric") from exc
    lam = options.get("box_cox_lambda")
    if lam is not None:
        y = stats.box_cox(y, lam)

    columns = {p: _design_column(p, [r[p] for r in used]) for p in predictors}
    models = [(f"univariable:{p}", [p]) for p in predictors]
    if len(predictors) > 1:
        models.append(("multivariable", predictors))

    fits = []
    rows = []
    for label, preds in models:
        names = [n for p in preds for n in columns[p][0]]
        x = np.hstack([columns[p][1] for p in preds])
        fit = stats.ols_fit(x, y, names=names, add_intercept=True)
        terms = [fit.row(n) for n in fit.names]
        fits.append({"model": label, "n": fit.n, "r2": fit.r2, "df_resid": fit.df_resid, "terms": terms})
        for t in terms:
            rows.append([label, t["term"], fmt_g(t["estimate"]), fmt_g(t["ci_low"]), fmt_g(t["ci_high"]),
                         fmt_g(t["p"]), fmt(t["vif"], 3), str(fit.n), fmt(fit.r2, 3)])
    header = ["model", "term", "estimate", "ci_low", "ci_high", "p", "vif", "n", "r2"]
    warnings = [f"dropped {dropped} row(s) with missing values"] if dropped else []
    doc = _document("regress", options, {os.path.basename(str(path)): sha256(path)},
                    models=fits, dropped_rows=dropped, warnings=warnings)
    return Report("regress", header, rows, doc, 0, 0, warnings)
