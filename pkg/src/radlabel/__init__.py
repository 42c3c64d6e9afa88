"""Multi-label disease annotation of CT radiology report text.

Rule-based and LLM labelers over a fixed 15-label schema, majority-vote
ensembling, agreement and F1 evaluation with bootstrap CIs, stratified
splitting, disagreement-driven sampling, and an annotation service for
building manual reference sets.
"""

__version__ = "0.1.0"
