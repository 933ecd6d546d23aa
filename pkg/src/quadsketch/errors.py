class QuadSketchError(Exception):
    pass


class ParseError(QuadSketchError, ValueError):
    """Input text is not valid JSON."""


class SchemaError(QuadSketchError, ValueError):
    """Record is valid JSON but misses required fields."""


class VocabularyError(QuadSketchError, KeyError):
    pass


class TrainingError(QuadSketchError, ValueError):
    pass


class DecodeError(QuadSketchError, ValueError):
    pass


class ConfigurationError(QuadSketchError, ValueError):
    """Components disagree on shared sizes (Q, K, leaf side) or are missing."""
