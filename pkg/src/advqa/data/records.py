"""Annotation schema, agreement filtering, and patient-stratified splits.

A record is retained only when all three annotator votes agree, the
schema validates, and the label is consistent with the visibility /
illumination rules: positive requires a visible face, a visible pill,
and good lighting; negative requires no visible pill and no visible
face; ambiguous requires no visible pill under dark or blurry footage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DataError

LABELS = ("positive", "negative", "ambiguous")
SEXES = ("male", "female", "unknown")
BODY_MOTIONS = ("oligocentric", "polycentric")
ACTIVITIES = ("drinking", "swallowing", "holding")
INTERACTIONS = ("talking", "listening")
ILLUMINATIONS = ("good", "dark", "blurry")


@dataclass
class Visibility:
    face_visible: bool = False
    pill_visible: bool = False
    water_visible: bool = False


@dataclass
class Descriptors:
    body_motion: str = "oligocentric"
    activities: list[str] = field(default_factory=list)
    interactions: list[str] = field(default_factory=list)
    visibility: Visibility = field(default_factory=Visibility)
    illumination: str = "good"


@dataclass
class AnnotationRecord:
    video_id: str
    patient_id: str
    sex: str
    label: str
    annotator_votes: list[str]
    descriptors: Descriptors
    caption: str
    qa_pairs: list[tuple[str, str]]


@dataclass
class DatasetSplit:
    train: list[AnnotationRecord]
    validation: list[AnnotationRecord]
    ratio: float
    stratify_by: str = "patient_id"


def record_to_dict(rec: AnnotationRecord) -> dict:
    d = rec.descriptors
    return {
        "video_id": rec.video_id,
        "patient_id": rec.patient_id,
        "sex": rec.sex,
        "label": rec.label,
        "annotator_votes": list(rec.annotator_votes),
        "descriptors": {
            "body_motion": d.body_motion,
            "activities": sorted(d.activities),
            "interactions": sorted(d.interactions),
            "visibility": {
                "face_visible": d.visibility.face_visible,
                "pill_visible": d.visibility.pill_visible,
                "water_visible": d.visibility.water_visible,
            },
            "illumination": d.illumination,
        },
        "caption": rec.caption,
        "qa_pairs": [[q, a] for q, a in rec.qa_pairs],
    }


def canonical_json(rec: AnnotationRecord) -> str:
    return json.dumps(record_to_dict(rec), sort_keys=True, indent=2) + "\n"


def parse_record(text: str, source: str = "<string>") -> AnnotationRecord:
    """Parse one annotation JSON document; errors carry source and field."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"{source}:{e.lineno}: invalid JSON: {e.msg}") from e
    try:
        desc = raw["descriptors"]
        vis = desc["visibility"]
        return AnnotationRecord(
            video_id=str(raw["video_id"]),
            patient_id=str(raw["patient_id"]),
            sex=str(raw["sex"]),
            label=str(raw["label"]),
            annotator_votes=[str(v) for v in raw["annotator_votes"]],
            descriptors=Descriptors(
                body_motion=str(desc["body_motion"]),
                activities=[str(a) for a in desc["activities"]],
                interactions=[str(i) for i in desc["interactions"]],
                visibility=Visibility(
                    face_visible=bool(vis["face_visible"]),
                    pill_visible=bool(vis["pill_visible"]),
                    water_visible=bool(vis["water_visible"]),
                ),
                illumination=str(desc["illumination"]),
            ),
            caption=str(raw["caption"]),
            qa_pairs=[(str(q), str(a)) for q, a in raw["qa_pairs"]],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{source}: missing or malformed field: {e}") from e


def _schema_problem(rec: AnnotationRecord) -> str | None:
    d = rec.descriptors
    if rec.label not in LABELS:
        return "schema:label"
    if rec.sex not in SEXES:
        return "schema:sex"
    if len(rec.annotator_votes) != 3 or any(v not in LABELS for v in rec.annotator_votes):
        return "schema:annotator_votes"
    if d.body_motion not in BODY_MOTIONS:
        return "schema:body_motion"
    if any(a not in ACTIVITIES for a in d.activities):
        return "schema:activities"
    if any(i not in INTERACTIONS for i in d.interactions):
        return "schema:interactions"
    if d.illumination not in ILLUMINATIONS:
        return "schema:illumination"
    if not rec.video_id or not rec.patient_id:
        return "schema:identifiers"
    return None


def _label_rule_problem(rec: AnnotationRecord) -> str | None:
    v = rec.descriptors.visibility
    ill = rec.descriptors.illumination
    if rec.label == "positive":
        if not (v.face_visible and v.pill_visible and ill == "good"):
            return "label_rule:positive"
    elif rec.label == "negative":
        if v.pill_visible or v.face_visible:
            return "label_rule:negative"
    else:
        if v.pill_visible or ill not in ("dark", "blurry"):
            return "label_rule:ambiguous"
    return None


def validate_and_filter(
    records: list[AnnotationRecord],
) -> tuple[list[AnnotationRecord], list[tuple[AnnotationRecord, str]]]:
    """Keep schema-valid, unanimous, rule-consistent records.

    Rejections carry a machine-readable reason code: ``disagreement``,
    ``vote_label_mismatch``, ``schema:<field>``, or ``label_rule:<label>``.
    """
    retained, rejected = [], []
    for rec in records:
        reason = _schema_problem(rec)
        if reason is None and len(set(rec.annotator_votes)) != 1:
            reason = "disagreement"
        if reason is None and rec.annotator_votes[0] != rec.label:
            reason = "vote_label_mismatch"
        if reason is None:
            reason = _label_rule_problem(rec)
        if reason is None:
            retained.append(rec)
        else:
            rejected.append((rec, reason))
    return retained, rejected


def split(records: list[AnnotationRecord], ratio: float, seed: int) -> DatasetSplit:
    """Patient-disjoint split with |train| within one patient of ratio*n.

    Records are first put in canonical video_id order so the result only
    depends on content and seed, not input ordering.
    """
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"split ratio must be in (0, 1), got {ratio}")
    records = sorted(records, key=lambda r: r.video_id)
    by_patient: dict[str, list[AnnotationRecord]] = {}
    for rec in records:
        by_patient.setdefault(rec.patient_id, []).append(rec)
    if len(by_patient) < 2:
        raise ContractError("cannot stratify a corpus with fewer than 2 patients")
    patients = sorted(by_patient)
    rng = np.random.default_rng(seed)
    rng.shuffle(patients)
    target = ratio * len(records)
    train: list[AnnotationRecord] = []
    val: list[AnnotationRecord] = []
    count = 0
    for p in patients:
        if count < target:
            train.extend(by_patient[p])
            count += len(by_patient[p])
        else:
            val.extend(by_patient[p])
    if not val:  # degenerate rounding: keep at least one patient out
        moved = by_patient[patients[-1]]
        val.extend(moved)
        train = [r for r in train if r.patient_id != patients[-1]]
    train.sort(key=lambda r: r.video_id)
    val.sort(key=lambda r: r.video_id)
    return DatasetSplit(train=train, validation=val, ratio=ratio)
