"""Exception hierarchy. Every error raised by the package derives from MaexError."""


class MaexError(Exception):
    pass


class DimensionError(MaexError, ValueError):
    pass


class SequenceTooShortError(MaexError, ValueError):
    pass


class EmptyPoolError(MaexError, ValueError):
    pass


class DegenerateVectorError(MaexError, ValueError):
    pass


class ConfigError(MaexError, ValueError):
    pass


class ContractError(MaexError, RuntimeError):
    pass


class CatalogError(MaexError, KeyError):
    def __str__(self):
        # KeyError repr-quotes its message; keep it readable
        return str(self.args[0]) if self.args else ""


class CorpusFormatError(MaexError, ValueError):
    pass


class InsufficientDataError(MaexError, ValueError):
    pass


class DegenerateCatalogError(MaexError, ValueError):
    pass


class CheckpointError(MaexError, ValueError):
    pass


class TrainingDivergedError(MaexError, RuntimeError):
    pass


class MissingArtifactError(MaexError, FileNotFoundError):
    pass
