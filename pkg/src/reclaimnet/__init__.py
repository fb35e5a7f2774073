"""Slur reclamation detection with user-context modeling.

A text encoder and a user encoder read the same tweet + biography input;
the user encoder is pretrained on weak LLM-derived affiliation labels,
and a learned sigmoid gate interpolates the two representations for the
final binary decision. Submodules: ``corpus`` (ingestion and splits),
``weak_labeler`` (LLM proxy annotation), ``encoder`` / ``fusion`` (models),
``training`` / ``pipeline`` (stages and orchestration), ``evaluation``
(metrics and significance), ``cli`` (command line).
"""

__version__ = "0.1.0"
