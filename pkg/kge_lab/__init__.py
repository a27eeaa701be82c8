# Negative-sampling loss lab for knowledge graph embedding

from .settings import VERSION as __version__  # noqa: F401
