from htr.evaluation.metrics import build_report, cer, levenshtein, score_sample, wer

__all__ = ["build_report", "cer", "levenshtein", "score_sample", "wer"]
