"""Stage-two logic: per-volume coverage verdicts and clinical-impact reports.

The two classifier probabilities are combined independently against a
threshold: scores above it flag the corresponding defect. Blood volumes use
slice-summation volumetry over the ground-truth pool masks; the Table-style
clinical report compares full stacks against base/apex-ablated variants of
the same subjects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .phantom import VolumeStack, extract_test_triplets
from .validation import check_probability

VERDICTS = ("Full", "MBS", "MAS", "MBS+MAS")


@dataclass
class CoverageVerdict:
    volume_id: str
    mbs_probability: float
    mas_probability: float
    verdict: str
    threshold: float
    mbs_trace: tuple      # per-triplet MBS scores, base -> apex, for audit
    mas_trace: tuple


@dataclass
class ClinicalReport:
    """Mean +- sd of LV measures for full coverage and each ablation."""

    n_subjects: int
    measures: dict        # measure -> {"full": (mean, sd), "MBS": ..., "MAS": ...}
    effects: dict         # measure -> {"MBS": percent, "MAS": percent}


def verdict_from_probabilities(mbs_p: float, mas_p: float,
                               threshold: float = 0.5) -> str:
    """Pure decision rule; a score strictly above the threshold flags a defect."""
    mbs = mbs_p > threshold
    mas = mas_p > threshold
    if mbs and mas:
        return "MBS+MAS"
    if mbs:
        return "MBS"
    if mas:
        return "MAS"
    return "Full"


def classify_coverage(volume: VolumeStack, mbs_model, mas_model,
                      threshold: float = 0.5,
                      strategy: str = "extreme") -> CoverageVerdict:
    """Run both classifiers on a volume and combine the outcomes.

    ``strategy`` picks how sliding-triplet scores reduce to one score per
    classifier: "extreme" (default) uses the topmost triplet for the basal
    classifier and the bottommost for the apical one; "max" takes each
    classifier's maximum over all triplets.
    """
    if volume.n_slices < 3:
        raise InputError(f"volume needs >= 3 slices, got {volume.n_slices}")
    if strategy not in ("extreme", "max"):
        raise InputError(f"unknown strategy {strategy!r}")
    triplets = extract_test_triplets(volume)
    blocks = np.stack([t.block for t in triplets])
    mbs_scores = np.atleast_1d(mbs_model(blocks))
    mas_scores = np.atleast_1d(mas_model(blocks))
    if strategy == "extreme":
        mbs_p = float(mbs_scores[0])
        mas_p = float(mas_scores[-1])
    else:
        mbs_p = float(mbs_scores.max())
        mas_p = float(mas_scores.max())
    check_probability(mbs_p, "MBS probability")
    check_probability(mas_p, "MAS probability")
    return CoverageVerdict(
        volume_id=volume.volume_id,
        mbs_probability=mbs_p,
        mas_probability=mas_p,
        verdict=verdict_from_probabilities(mbs_p, mas_p, threshold),
        threshold=threshold,
        mbs_trace=tuple(float(s) for s in mbs_scores),
        mas_trace=tuple(float(s) for s in mas_scores),
    )


def blood_volume(volume: VolumeStack) -> float:
    """Slice-summation volumetry of the pool masks, in ml.

    Sum over slices of pool pixel count x dx x dy, times dz; 1000 mm^3 = 1 ml.
    """
    if volume.labels is None:
        raise InputError("volume carries no masks")
    dx, dy, dz = volume.spacing
    pool_px = (volume.labels == 1).sum()
    return float(pool_px) * dx * dy * dz / 1000.0


MEASURES = ("LVEDV", "LVESV", "LVSV", "LVEF")


def _lv_measures(ed: VolumeStack, es: VolumeStack):
    edv = blood_volume(ed)
    esv = blood_volume(es)
    sv = edv - esv
    ef = sv / edv if edv > 0 else float("nan")
    return {"LVEDV": edv, "LVESV": esv, "LVSV": sv, "LVEF": 100.0 * ef}


def clinical_impact(cohort_pairs) -> ClinicalReport:
    """Table-style report over paired (ED, ES) full-coverage subjects.

    The MBS/MAS arms drop the basal/apical slice from the same stacks, so
    pairing is exact by construction. Effects are percentage changes of the
    cohort means relative to full coverage.
    """
    pairs = list(cohort_pairs)
    if not pairs:
        raise InputError("empty cohort")
    per_arm = {"full": [], "MBS": [], "MAS": []}
    for ed, es in pairs:
        if ed.volume_id != es.volume_id:
            raise InputError(
                f"unpaired cohort: ED {ed.volume_id} vs ES {es.volume_id}")
        if not (ed.has_base and ed.has_apex and es.has_base and es.has_apex):
            raise InputError("clinical impact needs full-coverage input volumes")
        per_arm["full"].append(_lv_measures(ed, es))
        per_arm["MBS"].append(_lv_measures(ed.drop_slices(base=True),
                                           es.drop_slices(base=True)))
        per_arm["MAS"].append(_lv_measures(ed.drop_slices(apex=True),
                                           es.drop_slices(apex=True)))

    measures = {}
    effects = {}
    for name in MEASURES:
        stats = {}
        for arm, rows in per_arm.items():
            vals = np.array([r[name] for r in rows])
            stats[arm] = (float(vals.mean()), float(vals.std()))
        measures[name] = stats
        effects[name] = {
            arm: 100.0 * (stats[arm][0] - stats["full"][0]) / stats["full"][0]
            for arm in ("MBS", "MAS")
        }
    return ClinicalReport(n_subjects=len(pairs), measures=measures, effects=effects)


# ---------------------------------------------------------------------------
# Text emission (tab-separated, documented field order)
# ---------------------------------------------------------------------------

VERDICT_FIELDS = ("volume_id", "mbs_probability", "mas_probability",
                  "verdict", "threshold")


def verdict_row(v: CoverageVerdict) -> str:
    return "\t".join([
        v.volume_id,
        f"{v.mbs_probability:.6f}",
        f"{v.mas_probability:.6f}",
        v.verdict,
        f"{v.threshold:g}",
    ])


def clinical_report_text(report: ClinicalReport) -> str:
    """Rows: measure, full mean+-sd, MBS mean+-sd, MBS effect %, MAS ditto."""
    lines = ["measure\tfull\tMBS\tMBS_effect\tMAS\tMAS_effect"]
    for name in MEASURES:
        stats = report.measures[name]
        eff = report.effects[name]
        lines.append("\t".join([
            name,
            "%.1f+-%.1f" % stats["full"],
            "%.1f+-%.1f" % stats["MBS"],
            "%+.1f%%" % eff["MBS"],
            "%.1f+-%.1f" % stats["MAS"],
            "%+.1f%%" % eff["MAS"],
        ]))
    return "\n".join(lines) + "\n"
