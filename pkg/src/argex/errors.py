"""Exception types shared across the package."""


class ArgexError(Exception):
    """Base class for all package errors."""


class DimensionError(ArgexError, ValueError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class DegenerateMaskError(ArgexError, ValueError):
    """A softmax row had no valid position."""


class GradientError(ArgexError, RuntimeError):
    pass


class CheckpointError(ArgexError, ValueError):
    pass


class CorpusError(ArgexError, ValueError):
    """Corpus validation failure; carries the record location when known."""

    def __init__(self, message, doc_id=None, sent_id=None, line=None):
        self.doc_id = doc_id
        self.sent_id = sent_id
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if doc_id is not None:
            where.append(f"doc {doc_id}")
        if sent_id is not None:
            where.append(f"sent {sent_id}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class CyclicParseError(CorpusError):
    pass


class SpanError(CorpusError):
    pass


class SchemaError(CorpusError):
    pass


class SubwordMapError(ArgexError, ValueError):
    pass


class ConfigError(ArgexError, ValueError):
    pass


class SequenceLengthError(ArgexError, ValueError):
    pass


class TrainingError(ArgexError, RuntimeError):
    def __init__(self, message, stage=None):
        self.stage = stage
        super().__init__(f"stage {stage}: {message}" if stage is not None else message)


class EvaluationError(ArgexError, ValueError):
    pass
