"""Dataset pipeline tests: schema round-trips, agreement filtering,
patient-stratified splitting, adaptive oversampling (verified against a
brute-force geometric oracle), and the synthetic corpus generator."""

import json

import numpy as np
import pytest

from advqa.data import (
    AnnotationRecord,
    Descriptors,
    FeaturePoint,
    Visibility,
    balance,
    canonical_json,
    generate_synthetic_corpus,
    load_manifest,
    make_label_counts,
    parse_record,
    render_video,
    save_corpus,
    split,
    validate_and_filter,
)
from advqa.data.balance import largest_remainder_counts
from advqa.errors import ConfigurationError, ContractError, DataError


def make_record(video_id="vid0000", patient_id="pat000", label="positive",
                votes=None, face=True, pill=True, water=True, illumination="good"):
    return AnnotationRecord(
        video_id=video_id,
        patient_id=patient_id,
        sex="female",
        label=label,
        annotator_votes=votes if votes is not None else [label] * 3,
        descriptors=Descriptors(
            body_motion="oligocentric",
            activities=["drinking"],
            interactions=[],
            visibility=Visibility(face_visible=face, pill_visible=pill,
                                  water_visible=water),
            illumination=illumination,
        ),
        caption="the patient swallowed the pill",
        qa_pairs=[("was the pill swallowed with water", "yes")],
    )


class TestRecords:
    def test_round_trip_canonical_form(self):
        rec = make_record()
        text = canonical_json(rec)
        assert canonical_json(parse_record(text)) == text

    def test_parse_rejects_invalid_json(self):
        with pytest.raises(DataError, match="invalid JSON"):
            parse_record("{not json", source="bad.json")

    def test_parse_rejects_missing_field(self):
        doc = json.loads(canonical_json(make_record()))
        del doc["label"]
        with pytest.raises(DataError, match="label"):
            parse_record(json.dumps(doc), source="bad.json")

    def test_unanimous_votes_retained(self):
        retained, rejected = validate_and_filter(
            [make_record(votes=["positive"] * 3)])
        assert len(retained) == 1 and not rejected

    def test_disagreement_rejected_with_reason(self):
        retained, rejected = validate_and_filter(
            [make_record(votes=["positive", "positive", "ambiguous"])])
        assert not retained
        assert rejected[0][1] == "disagreement"

    def test_vote_label_mismatch_rejected(self):
        rec = make_record(label="positive", votes=["negative"] * 3,
                          face=False, pill=False)
        _, rejected = validate_and_filter([rec])
        assert rejected[0][1] == "vote_label_mismatch"

    def test_label_rule_violations_rejected(self):
        bad_pos = make_record(label="positive", pill=False)
        bad_neg = make_record(label="negative", face=True, pill=False, water=False)
        bad_amb = make_record(label="ambiguous", face=False, pill=False,
                              water=False, illumination="good")
        _, rejected = validate_and_filter([bad_pos, bad_neg, bad_amb])
        reasons = sorted(r for _, r in rejected)
        assert reasons == ["label_rule:ambiguous", "label_rule:negative",
                           "label_rule:positive"]

    def test_schema_violation_rejected(self):
        rec = make_record()
        rec.sex = "other"
        _, rejected = validate_and_filter([rec])
        assert rejected[0][1] == "schema:sex"


class TestSplit:
    def test_ratio_one_rejected(self):
        with pytest.raises(ContractError):
            split([make_record()], ratio=1.0, seed=0)

    def test_single_patient_rejected(self):
        recs = [make_record(video_id=f"vid{i:04d}") for i in range(4)]
        with pytest.raises(ContractError):
            split(recs, ratio=0.7, seed=0)

    def test_patient_disjoint_and_ratio(self):
        recs = [make_record(video_id=f"vid{i:04d}", patient_id=f"pat{i % 20:03d}")
                for i in range(100)]
        ds = split(recs, ratio=0.7, seed=3)
        train_p = {r.patient_id for r in ds.train}
        val_p = {r.patient_id for r in ds.validation}
        assert not train_p & val_p
        assert len(ds.train) + len(ds.validation) == 100
        # within one patient's worth (5 records) of the 70 target
        assert abs(len(ds.train) - 70) <= 5

    def test_deterministic_and_order_invariant(self):
        recs = [make_record(video_id=f"vid{i:04d}", patient_id=f"pat{i % 7:03d}")
                for i in range(35)]
        a = split(recs, ratio=0.7, seed=11)
        b = split(list(reversed(recs)), ratio=0.7, seed=11)
        assert [r.video_id for r in a.train] == [r.video_id for r in b.train]
        assert [r.video_id for r in a.validation] == [r.video_id for r in b.validation]


class TestBalance:
    @staticmethod
    def make_points(counts, seed=0, spread=0.1):
        rng = np.random.default_rng(seed)
        centers = {"positive": np.array([0.0, 0.0]),
                   "negative": np.array([5.0, 0.0]),
                   "ambiguous": np.array([0.0, 5.0])}
        pts = []
        for label, c in counts.items():
            for i in range(c):
                pts.append(FeaturePoint(
                    feature=centers[label] + rng.normal(0, spread, 2),
                    label=label, source_id=f"{label}{i}"))
        return pts

    def test_already_balanced_is_noop(self):
        pts = self.make_points({"positive": 10, "negative": 10, "ambiguous": 10})
        out = balance(pts, {"positive": 1 / 3, "negative": 1 / 3, "ambiguous": 1 / 3},
                      k=3, seed=1)
        assert out == pts

    def test_counting_oracle_uniform_target(self):
        pts = self.make_points({"positive": 60, "negative": 28, "ambiguous": 12})
        out = balance(pts, {"positive": 1 / 3, "negative": 1 / 3, "ambiguous": 1 / 3},
                      k=3, seed=2)
        assert len(out) == 100
        for label in ("positive", "negative", "ambiguous"):
            frac = sum(p.label == label for p in out) / len(out)
            assert abs(frac - 1 / 3) <= 0.02

    @staticmethod
    def dist_to_segment(x, a, b):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            return float(np.linalg.norm(x - a))
        t = np.clip(float((x - a) @ ab) / denom, 0.0, 1.0)
        return float(np.linalg.norm(x - (a + t * ab)))

    @pytest.mark.parametrize("adaptive", [True, False])
    def test_geometry_oracle_brute_force(self, adaptive):
        # every synthetic point must lie on a segment between two
        # same-class originals (brute force over all pairs)
        pts = self.make_points({"positive": 40, "negative": 20, "ambiguous": 8})
        out = balance(pts, {"positive": 1 / 3, "negative": 1 / 3, "ambiguous": 1 / 3},
                      k=3, seed=5, adaptive=adaptive)
        originals = {l: [p.feature for p in pts if p.label == l]
                     for l in ("positive", "negative", "ambiguous")}
        synth = [p for p in out if p.synthetic]
        assert synth, "expected synthetic points for minority classes"
        for p in synth:
            feats = originals[p.label]
            d = min(self.dist_to_segment(p.feature, a, b)
                    for i, a in enumerate(feats) for b in feats[i + 1:])
            assert d <= 1e-9

    def test_minority_originals_never_dropped(self):
        pts = self.make_points({"positive": 40, "negative": 20, "ambiguous": 8})
        out = balance(pts, {"positive": 1 / 3, "negative": 1 / 3, "ambiguous": 1 / 3},
                      k=3, seed=7)
        out_ids = {p.source_id for p in out if not p.synthetic}
        for label in ("negative", "ambiguous"):
            for p in pts:
                if p.label == label:
                    assert p.source_id in out_ids

    def test_small_class_rejected(self):
        pts = self.make_points({"positive": 20, "negative": 20, "ambiguous": 3})
        with pytest.raises(ConfigurationError, match="ambiguous"):
            balance(pts, {"positive": 1 / 3, "negative": 1 / 3, "ambiguous": 1 / 3},
                    k=3, seed=0)

    def test_deterministic(self):
        pts = self.make_points({"positive": 30, "negative": 12, "ambiguous": 8})
        target = {"positive": 1 / 3, "negative": 1 / 3, "ambiguous": 1 / 3}
        a = balance(pts, target, k=3, seed=9)
        b = balance(pts, target, k=3, seed=9)
        assert len(a) == len(b)
        for pa, pb in zip(a, b):
            assert pa.label == pb.label and pa.synthetic == pb.synthetic
            assert np.array_equal(pa.feature, pb.feature)


class TestCorpus:
    def test_label_counts_largest_remainder(self):
        counts = make_label_counts(806)
        assert counts == {"positive": 483, "negative": 226, "ambiguous": 97}
        assert largest_remainder_counts(
            {"positive": 0.60, "negative": 0.28, "ambiguous": 0.12}, 50) == \
            {"positive": 30, "negative": 14, "ambiguous": 6}

    def test_minimum_size_enforced(self):
        with pytest.raises(ContractError):
            generate_synthetic_corpus(5, seed=0)

    def test_all_records_pass_validation(self):
        _, records = generate_synthetic_corpus(30, seed=4, render_videos=False)
        retained, rejected = validate_and_filter(records)
        assert len(retained) == 30 and not rejected

    def test_positive_pill_motif_in_most_frames(self):
        rng = np.random.default_rng(0)
        video = render_video("positive", "good", rng)
        # only the pill blob reaches full brightness (face 0.9, stripe 0.85)
        hits = sum(1 for f in range(video.shape[0])
                   if (video[f] >= 0.999).any())
        assert hits >= 6

    def test_ambiguous_is_dark_or_blurry(self):
        _, records = generate_synthetic_corpus(40, seed=8, render_videos=False)
        amb = [r for r in records if r.label == "ambiguous"]
        assert amb
        assert all(r.descriptors.illumination in ("dark", "blurry") for r in amb)

    def test_dark_video_is_darker_than_positive(self):
        rng = np.random.default_rng(1)
        dark = render_video("ambiguous", "dark", rng)
        pos = render_video("positive", "good", rng)
        assert dark.mean() < 0.5 * pos.mean()

    def test_determinism_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            videos, records = generate_synthetic_corpus(12, seed=13)
            save_corpus(tmp_path / sub, videos, records)
        a_files = sorted((tmp_path / "a").rglob("*"))
        b_files = sorted((tmp_path / "b").rglob("*"))
        assert [f.name for f in a_files if f.is_file()] == \
               [f.name for f in b_files if f.is_file()]
        for fa, fb in zip(a_files, b_files):
            if fa.is_file():
                assert fa.read_bytes() == fb.read_bytes()

    def test_manifest_round_trip(self, tmp_path):
        videos, records = generate_synthetic_corpus(12, seed=2)
        manifest = save_corpus(tmp_path, videos, records)
        loaded_videos, loaded_records = load_manifest(manifest)
        assert [r.video_id for r in loaded_records] == \
               [r.video_id for r in records]
        for v, lv in zip(videos, loaded_videos):
            assert np.array_equal(v, lv)
        for r, lr in zip(records, loaded_records):
            assert canonical_json(r) == canonical_json(lr)

    def test_qa_pairs_have_five_dimensions(self):
        _, records = generate_synthetic_corpus(10, seed=6, render_videos=False)
        for r in records:
            assert len(r.qa_pairs) == 5
            assert all(q and a for q, a in r.qa_pairs)

    def test_paper_scale_arithmetic(self):
        # 806 records with the default mix: retained 483/226/97 and a
        # 70/30 patient-stratified split of 564/242 within one patient
        _, records = generate_synthetic_corpus(806, seed=20, render_videos=False)
        retained, rejected = validate_and_filter(records)
        assert not rejected
        by_label = {l: sum(r.label == l for r in retained)
                    for l in ("positive", "negative", "ambiguous")}
        assert by_label == {"positive": 483, "negative": 226, "ambiguous": 97}
        ds = split(retained, ratio=0.70, seed=20)
        assert abs(len(ds.train) - 564) <= 5
        assert abs(len(ds.validation) - 242) <= 5
