from .base import LanguageModel, lm_logits
from .checkpoint import load, save
from .table import TableLM, fit_table_lm, peaked_table_lm, random_table_lm
from .transformer import TinyTransformer, TransformerConfig, init_transformer
from .vocab import BOS, EOS, PAD, UNK, Vocab, build_vocab

__all__ = [
    "BOS", "EOS", "PAD", "UNK",
    "LanguageModel", "TableLM", "TinyTransformer", "TransformerConfig", "Vocab",
    "build_vocab", "fit_table_lm", "init_transformer", "lm_logits", "load",
    "peaked_table_lm", "random_table_lm", "save",
]
