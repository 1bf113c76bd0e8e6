"""Exception hierarchy shared by every conceptrace module."""


class ConceptTraceError(Exception):
    """Base class for all toolkit errors."""


class InvalidToken(ConceptTraceError):
    pass


class NumericalOverflow(ConceptTraceError):
    def __init__(self, where: str, layer: int, token: int):
        super().__init__(f"non-finite value in {where} at layer {layer}, token {token}")
        self.where = where
        self.layer = layer
        self.token = token


class InvalidPatch(ConceptTraceError):
    pass


class ParseError(ConceptTraceError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(ConceptTraceError):
    def __init__(self, sample_id: str, message: str):
        super().__init__(f"sample {sample_id!r}: {message}")
        self.sample_id = sample_id


class GenerationError(ConceptTraceError):
    pass


class TrainingDiverged(ConceptTraceError):
    pass


class ZeroVarianceEmbeddings(ConceptTraceError):
    pass


class InvalidCorruptionTarget(ConceptTraceError):
    pass


class DegenerateTrace(ConceptTraceError):
    """Corruption did not lower the probability of the expected token."""

    def __init__(self, p_clean: float, p_corrupted: float):
        super().__init__(
            f"corruption did not damage the prediction "
            f"(p_clean={p_clean:.6g}, p_corrupted={p_corrupted:.6g})"
        )
        self.p_clean = p_clean
        self.p_corrupted = p_corrupted


class NotPredicted(ConceptTraceError):
    pass


class UndefinedCorrelation(ConceptTraceError):
    pass


class KindMismatch(ConceptTraceError):
    pass


class CheckpointError(ConceptTraceError):
    pass
