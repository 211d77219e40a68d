"""Curation and fixed-context sequence packing for image-text caption shards."""

from .curation import (
    AttachStats,
    CoverageStats,
    FilterStats,
    MixtureEntry,
    MixtureReport,
    MixtureSpec,
    QualityScore,
    attach_scores,
    filter_by_threshold,
    load_score_table,
    load_uid_set,
    mixture_report,
    save_uid_set,
    select_by_uid_set,
    union_dedup,
)
from .errors import (
    ConfigError,
    ContractViolation,
    CorruptRecordError,
    FormatError,
    MmpackError,
    StructuralError,
)
from .ingest import (
    CaptionSample,
    ImagePayload,
    ResizePolicy,
    Shard,
    ShardRead,
    SkippedEntry,
    read_shard,
    resize_dims,
    write_shard,
)
from .lengths import (
    ByteTokenizer,
    MeasuredSample,
    PackerConfig,
    TokenizerPort,
    load_tokenizer,
    measure,
    measure_shard,
)
from .packer import (
    Bin,
    EncodedImage,
    PackedSequence,
    PackReport,
    assemble,
    ffd_pack,
    first_fit_decreasing,
    pack_shard,
)
from .packstore import (
    ContainerHeader,
    VerifyReport,
    read_container,
    read_header,
    verify_container,
    write_container,
)
from .pooling import PoolSpec, adaptive_avg_pool, pool_windows, token_budget

__version__ = "0.1.0"
