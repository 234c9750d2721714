"""Exception types. Every error carries a short ``code`` used by the CLI error line."""


class EmottsError(Exception):
    code = "error"


class InvalidInputError(EmottsError, ValueError):
    code = "invalid-input"


class InputTooShortError(InvalidInputError):
    code = "input-too-short"


class ConfigError(EmottsError, ValueError):
    code = "config"


class SpecError(ConfigError):
    code = "spec"


class AlignmentError(EmottsError, ValueError):
    code = "alignment"


class ManifestError(EmottsError, ValueError):
    code = "manifest"

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


class RegistryError(EmottsError, ValueError):
    code = "registry"


class UnknownWordError(EmottsError, ValueError):
    code = "unknown-word"

    def __init__(self, token, language_id):
        self.token = token
        self.language_id = language_id
        super().__init__(f"unknown word {token!r} for language {language_id}")


class EncodingError(EmottsError, ValueError):
    code = "encoding"


class FormatError(EmottsError, ValueError):
    code = "format"


class InvariantError(EmottsError, ValueError):
    code = "invariant"


class ShapeError(EmottsError, ValueError):
    code = "shape"


class LabelError(EmottsError, ValueError):
    code = "label"


class NonFiniteLossError(EmottsError, FloatingPointError):
    code = "non-finite-loss"

    def __init__(self, term, step=None, batch_ids=None):
        self.term = term
        self.step = step
        self.batch_ids = list(batch_ids or [])
        msg = f"non-finite loss term {term!r}"
        if step is not None:
            msg += f" at step {step}"
        if self.batch_ids:
            msg += f" (batch: {', '.join(self.batch_ids)})"
        super().__init__(msg)


class MigrationError(EmottsError, ValueError):
    code = "migration"


class ConfigMismatchError(EmottsError, ValueError):
    code = "config-mismatch"


class UndefinedSimilarityError(EmottsError, ValueError):
    code = "undefined-similarity"


class ReportError(EmottsError, ValueError):
    code = "report"


class SetupError(EmottsError, RuntimeError):
    code = "setup"
