from .records import (
    AnnotationRecord,
    Descriptors,
    Visibility,
    DatasetSplit,
    parse_record,
    record_to_dict,
    canonical_json,
    validate_and_filter,
    split,
)
from .balance import FeaturePoint, balance
from .corpus import (
    generate_synthetic_corpus,
    make_label_counts,
    render_video,
    save_corpus,
    load_manifest,
    DEFAULT_DISTRIBUTION,
)

__all__ = [
    "AnnotationRecord",
    "Descriptors",
    "Visibility",
    "DatasetSplit",
    "parse_record",
    "record_to_dict",
    "canonical_json",
    "validate_and_filter",
    "split",
    "FeaturePoint",
    "balance",
    "generate_synthetic_corpus",
    "make_label_counts",
    "render_video",
    "save_corpus",
    "load_manifest",
    "DEFAULT_DISTRIBUTION",
]
