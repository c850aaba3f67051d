"""Batch encoder adapter: turns id+text / id+uri manifests into RSEB v1
embedding stores the curation pipeline can read directly.

The pipeline consumes embeddings through the RSEB file format alone, so
this package writes that format itself and never imports the pipeline.
"""

from .encoders import Encoder, EncodeError, FakeHashEncoder, available_encoders, get_encoder
from .export import ExportError, ExportJob, ExportResult, export_embeddings, read_manifest

__all__ = [
    "Encoder",
    "EncodeError",
    "ExportError",
    "ExportJob",
    "ExportResult",
    "FakeHashEncoder",
    "available_encoders",
    "export_embeddings",
    "get_encoder",
    "read_manifest",
]
