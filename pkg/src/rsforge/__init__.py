"""rsforge: curate image-text pair datasets from interleaved documents.

The pipeline extracts images and sentences from multimodal documents,
filters both streams by quality rules, deduplicates near-identical items,
pairs each image with semantically relevant sentences via clustered
retrieval, augments pairs with synthetic captions, gates them on a
semantic-similarity band, and balance-samples the survivors into a
dataset with bounded per-cluster concentration.
"""

__version__ = "0.1.0"
