"""Image-folder to embedding-file export pipeline.

Walks a class-per-subdirectory image folder, runs each image through the
penultimate layer of a vision backbone, and writes the rows to the FSE1
binary embedding format consumed by the benchmark harness. The two
packages share only that file format.
"""

from fse_export.extract import ExportJob, extract
from fse_export.verify import VerifyReport, verify
from fse_export.writer import write_embeddings

__all__ = ["ExportJob", "extract", "VerifyReport", "verify", "write_embeddings"]
