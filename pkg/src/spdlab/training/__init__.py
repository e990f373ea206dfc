from .data import (
    SftPair,
    SyntheticSuite,
    World,
    dataset_checksum,
    make_suite,
    read_corpus,
    read_pairs,
    write_corpus,
    write_pairs,
)
from .distill import (
    DistillConfig,
    TeacherLogitStore,
    distill,
    export_teacher_logits,
    heldout_nll,
    mean_token_kl,
)
from .loops import CurriculumSpec, Stage, TrainConfig, TrainResult, pretrain, run_curriculum, sft
from .packing import PackedRows, pack_sequences

__all__ = [
    "CurriculumSpec", "DistillConfig", "PackedRows", "SftPair", "Stage", "SyntheticSuite",
    "TeacherLogitStore", "TrainConfig", "TrainResult", "World", "dataset_checksum", "distill",
    "export_teacher_logits", "heldout_nll", "make_suite", "mean_token_kl", "pack_sequences",
    "pretrain", "read_corpus", "read_pairs", "run_curriculum", "sft", "write_corpus", "write_pairs",
]
