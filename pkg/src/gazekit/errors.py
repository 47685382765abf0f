"""Exception hierarchy shared by all gazekit modules.

Two broad families matter for the CLI exit code: ``ValidationError``
(bad values, mismatched shapes, unsatisfied preconditions -> exit 1)
and ``FormatError`` (malformed files -> exit 2, like other I/O trouble).
"""


class GazekitError(Exception):
    """Base class for all errors raised by gazekit."""


class ValidationError(GazekitError):
    """Invalid values or unsatisfied preconditions."""


class FormatError(GazekitError):
    """Malformed input file."""


# --- core ---------------------------------------------------------------

class BadValue(ValidationError):
    """Negative, NaN or infinite value where a finite one is required."""


class AllZero(ValidationError):
    """Every value is zero; no density can be formed."""


class ShapeMismatch(ValidationError):
    """Grid dimensions disagree where they must match."""


class OutOfBounds(ValidationError):
    """Fixation coordinates fall outside the registered image."""


class BadMagic(FormatError):
    """File does not start with the expected magic bytes or flag."""


class BadDimensions(FormatError):
    """Header dimensions are zero, overflow, or disagree with the payload."""


class NotNormalized(FormatError):
    """Density payload does not sum to one within tolerance."""


class ParseError(FormatError):
    """Malformed text record; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# --- metrics ------------------------------------------------------------

class MissingDensity(ValidationError):
    """No density registered for an image that has fixations."""

    def __init__(self, image_id: str, model: str | None = None):
        who = f"model {model!r}" if model else "model"
        super().__init__(f"{who} has no density for image {image_id!r}")
        self.image_id = image_id
        self.model = model


class ZeroDensityAtFixation(ValidationError):
    """A fixated pixel carries zero probability mass."""

    def __init__(self, image_id: str, pixel: tuple[int, int]):
        super().__init__(
            f"zero probability at fixated pixel {pixel} of image {image_id!r}"
        )
        self.image_id = image_id
        self.pixel = pixel


class NoFixations(ValidationError):
    """An operation that needs at least one fixation got none."""


class ZeroVariance(ValidationError):
    """A constant map where nonzero variance is required."""


class EmptyNonfixPool(ValidationError):
    """Shuffled AUC needs a nonempty pool of nonfixation pixels."""


class SingleImagePool(ValidationError):
    """The shuffled-AUC-optimal map needs at least two images."""


# --- baselines ----------------------------------------------------------

class TooFewFixations(ValidationError):
    """Gold-standard KDE needs at least two fixations."""


class NonpositiveGold(ValidationError):
    """Percentage scoring needs a strictly positive gold-standard gain."""


# --- ensemble -----------------------------------------------------------

class BadWeights(ValidationError):
    """Mixture weights are negative or do not sum to one."""


class MissingInstance(ValidationError):
    """An expected model instance density is absent from the registry."""


# --- calibration --------------------------------------------------------

class TooFewPixels(ValidationError):
    """Fewer pixels than requested quantile bins."""


# --- readout ------------------------------------------------------------

class TooFewImages(ValidationError):
    """Fewer images than cross-validation folds."""


class Diverged(GazekitError):
    """Training loss became NaN."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch
