"""hypass: source-validated clustering-hyperparameter selection for
pseudo-labeling domain adaptation, with the importance-weighting theory it
rests on, on desk-scale synthetic benchmarks."""

__version__ = "0.1.0"
