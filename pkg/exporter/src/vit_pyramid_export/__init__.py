"""Export multi-layer ViT features as a depthfield pyramid file."""

from .exporter import (
    ExportConfig,
    ExportError,
    export,
    extract_and_reassemble,
    load_encoder,
    write_pyramid_file,
)

__version__ = "0.1.0"
