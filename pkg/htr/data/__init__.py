from htr.data.batching import Batch, LabeledLine, batch_plan, collate, load_lines, make_batches, prefetch
from htr.data.manifest import load_manifest, split_entries, write_manifest
from htr.data.synth import GlyphSet, synth_line, write_synthetic_corpus

__all__ = [
    "Batch",
    "batch_plan",
    "GlyphSet",
    "LabeledLine",
    "collate",
    "load_lines",
    "load_manifest",
    "make_batches",
    "prefetch",
    "split_entries",
    "synth_line",
    "write_manifest",
    "write_synthetic_corpus",
]
