"""Deep classifiers over preprocessed spectral tensors.

Consumes the pipeline's published file formats only: SpecCube v1 tensor
files, annotation JSON, clinical CSV, labels CSV, and split-plan JSON.
Emits member predictions as predictions.csv in the evaluation-harness
contract (raw logits, one row per patient per member).
"""

__version__ = "0.1.0"
