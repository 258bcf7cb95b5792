"""Synthetic adherence-video corpus generator.

Each video is a procedurally rendered [F, H, W, C] float stack whose
label-determining motifs are visible to a patch encoder: a bright pill
blob travelling toward the face region, a checkerboard face patch, a
water-bottle stripe, and a global illumination level. Captions and QA
pairs are templated from the descriptors using only vocabulary words.

QA pairs come in a fixed five-slot order, one per benchmark dimension:
correctness, detailing, contextual, temporal, and a paraphrase of the
correctness question used for the consistency dimension.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from ..errors import ContractError, DataError
from .balance import largest_remainder_counts
from .records import AnnotationRecord, Descriptors, Visibility, canonical_json, parse_record

DEFAULT_DISTRIBUTION = {"positive": 0.60, "negative": 0.28, "ambiguous": 0.12}
FRAMES = 8
FRAME_SIZE = 32
CHANNELS = 3
VIDEOS_PER_PATIENT = 5

QUESTIONS = (
    "was the pill swallowed with water",
    "what is visible in the video",
    "what activity is observed in the video",
    "what happened first in the video",
    "was the medication intake observed in the video",
)


def make_label_counts(n: int, distribution: dict[str, float] | None = None) -> dict[str, int]:
    return largest_remainder_counts(distribution or DEFAULT_DISTRIBUTION, n)


def answer_templates(label: str, illumination: str) -> list[str]:
    if label == "positive":
        return [
            "yes the patient swallowed the pill and drank water",
            "the face and the pill and the water bottle is visible with good lighting",
            "the patient is drinking and swallowing the medication",
            "the patient swallowed the pill first then drank water after",
            "yes the medication intake was observed in the video",
        ]
    if label == "negative":
        return [
            "no the pill was not seen and the face was not visible",
            "the background is visible and the person is not seen",
            "the person is talking in the background",
            "no intake happened in the video",
            "no the medication intake was not observed in the video",
        ]
    return [
        f"unclear the video is {illumination} and the pill is not seen",
        f"the video shows {illumination} hands and motion",
        "the activity is unclear in the video",
        "unclear what happened first in the video",
        "unclear the medication intake was not observed in the video",
    ]


def _caption(label: str, illumination: str) -> str:
    if label == "positive":
        return ("the patient swallowed the pill and drank water "
                "with good lighting and the face visible")
    if label == "negative":
        return "the person is talking in the background and no pill is seen"
    return f"a {illumination} video shows hands and motion and no pill is seen"


def _descriptors(label: str, rng: np.random.Generator) -> Descriptors:
    if label == "positive":
        return Descriptors(
            body_motion="oligocentric",
            activities=["drinking", "swallowing"],
            interactions=[],
            visibility=Visibility(face_visible=True, pill_visible=True, water_visible=True),
            illumination="good",
        )
    if label == "negative":
        return Descriptors(
            body_motion="polycentric",
            activities=[],
            interactions=["talking"] if rng.uniform() < 0.5 else ["listening"],
            visibility=Visibility(face_visible=False, pill_visible=False, water_visible=False),
            illumination="good",
        )
    return Descriptors(
        body_motion="polycentric",
        activities=["holding"],
        interactions=[],
        visibility=Visibility(face_visible=bool(rng.uniform() < 0.5),
                              pill_visible=False, water_visible=False),
        illumination="dark" if rng.uniform() < 0.5 else "blurry",
    )


def render_video(label: str, illumination: str, rng: np.random.Generator,
                 frames: int = FRAMES, size: int = FRAME_SIZE,
                 channels: int = CHANNELS) -> np.ndarray:
    """Render an [F, H, W, C] stack in [0, 1] with label-driven motifs.

    Positive motifs occupy fixed patch locations and each comes with an
    exactly sign-inverted twin half a frame away, so per-frame pooling
    over patch positions cancels them out: telling positive from
    negative requires the per-patch (location-preserving) view, while
    the ambiguous illumination motif is global and visible to any
    pooling. The pill blob is the only element at full brightness."""
    base = 0.5
    video = base + rng.normal(0.0, 0.04, (frames, size, size, channels))
    if label == "positive":
        half = size // 2
        # face region: checkerboard patch top-left, inverted twin below
        face = (np.indices((8, 8)).sum(axis=0) % 2)[..., None] * 0.7 - 0.35
        video[:, 0:8, 0:8, :] += face
        video[:, half:half + 8, 0:8, :] -= face
        # water stripe: bright band at the right, dark twin to its left
        video[:, :, size - 5:size - 2, :] += 0.3
        video[:, :, size - 5 - half:size - 2 - half, :] -= 0.3
        # pill blob rising toward the face row, with a dark twin half a
        # frame below (same within-patch position); its column stays
        # clear of the face and stripe motifs so the twin pair replaces
        # plain background and the frame mean is unchanged
        col = half + 4
        start, end = half - 4, 1
        for f in range(frames):
            r = int(round(start + (end - start) * f / (frames - 1)))
            video[f, r:r + 3, col:col + 3, :] = 1.0
            video[f, r + half:r + half + 3, col:col + 3, :] = 0.0
    if label == "ambiguous":
        if illumination == "dark":
            video *= 0.3
        else:
            for f in range(frames):
                video[f] = uniform_filter(video[f], size=(5, 5, 1))
    return np.clip(video, 0.0, 1.0)


def generate_synthetic_corpus(
    n: int, seed: int, distribution: dict[str, float] | None = None,
    render_videos: bool = True, frame_size: int = FRAME_SIZE,
) -> tuple[list[np.ndarray | None], list[AnnotationRecord]]:
    """Produce ``n`` videos and unanimous, rule-consistent records."""
    if n < 10:
        raise ContractError(f"corpus size must be at least 10, got {n}")
    counts = make_label_counts(n, distribution)
    rng = np.random.default_rng(seed)
    labels = [l for l in sorted(counts) for _ in range(counts[l])]
    rng.shuffle(labels)
    n_patients = max(2, n // VIDEOS_PER_PATIENT)
    videos: list[np.ndarray | None] = []
    records: list[AnnotationRecord] = []
    for i, label in enumerate(labels):
        desc = _descriptors(label, rng)
        sex = ["male", "female", "unknown"][int(rng.integers(3))]
        rec = AnnotationRecord(
            video_id=f"vid{i:04d}",
            patient_id=f"pat{i % n_patients:03d}",
            sex=sex,
            label=label,
            annotator_votes=[label] * 3,
            descriptors=desc,
            caption=_caption(label, desc.illumination),
            qa_pairs=list(zip(QUESTIONS, answer_templates(label, desc.illumination))),
        )
        records.append(rec)
        if render_videos:
            videos.append(render_video(label, desc.illumination, rng, size=frame_size))
        else:
            videos.append(None)
    return videos, records


def save_corpus(out_dir: str | Path, videos: list[np.ndarray | None],
                records: list[AnnotationRecord]) -> Path:
    """Write videos/*.npy, records/*.json, and a manifest; returns its path."""
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    (out / "records").mkdir(parents=True, exist_ok=True)
    entries = []
    for video, rec in zip(videos, records):
        rec_path = out / "records" / f"{rec.video_id}.json"
        rec_path.write_text(canonical_json(rec))
        vid_path = None
        if video is not None:
            vid_path = out / "videos" / f"{rec.video_id}.npy"
            np.save(vid_path, video)
        entries.append({
            "video": str(vid_path.relative_to(out)) if vid_path else None,
            "record": str(rec_path.relative_to(out)),
        })
    manifest = out / "corpus_manifest.json"
    manifest.write_text(json.dumps({"items": entries}, sort_keys=True, indent=2) + "\n")
    return manifest


def load_manifest(manifest_path: str | Path) -> tuple[list[np.ndarray | None],
                                                      list[AnnotationRecord]]:
    path = Path(manifest_path)
    try:
        raw = json.loads(path.read_text())
        items = raw["items"]
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise DataError(f"{path}: unreadable corpus manifest: {e}") from e
    base = path.parent
    videos: list[np.ndarray | None] = []
    records: list[AnnotationRecord] = []
    for item in items:
        rec_path = base / item["record"]
        records.append(parse_record(rec_path.read_text(), source=str(rec_path)))
        videos.append(np.load(base / item["video"]) if item.get("video") else None)
    return videos, records
