from .evaluation import acceptance_stats, eval_generation, fit_policy
from .text import PRF, ScoreReport, bleu_4, ngrams, rouge_l, rouge_n, score_pairs

__all__ = ["PRF", "ScoreReport", "acceptance_stats", "fit_policy", "bleu_4", "eval_generation", "ngrams", "rouge_l",
           "rouge_n", "score_pairs"]
