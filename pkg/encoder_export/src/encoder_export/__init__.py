"""Feature-export sidecar for the video caption factuality toolkit.

Runs a deterministic dual encoder over video frames and caption text and
writes the pre-projection features as FVCE files, plus the encoder's own
projection heads as an FVCW checkpoint. The scoring toolkit consumes these
artifacts purely through the file formats and, in serve mode, through the
encoder HTTP API; nothing here imports the toolkit itself.
"""

from .encoder import DEFAULT_VARIANT, VARIANTS, EncoderVariant, HashEncoder
from .export import ExportError, ExportJob, ExportResult, run_export
from .fvcio import FormatError, read_matrix, read_projection, write_matrix, write_projection
from .manifest import Caption, ExportCorpus, ManifestError, Video, read_corpus

__version__ = "0.1.0"

__all__ = [
    "Caption",
    "DEFAULT_VARIANT",
    "EncoderVariant",
    "ExportCorpus",
    "ExportError",
    "ExportJob",
    "ExportResult",
    "FormatError",
    "HashEncoder",
    "ManifestError",
    "VARIANTS",
    "Video",
    "__version__",
    "read_corpus",
    "read_matrix",
    "read_projection",
    "run_export",
    "write_matrix",
    "write_projection",
]
