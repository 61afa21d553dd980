"""Exception types shared across the package.

``ValidationError`` subclasses signal bad inputs (malformed files,
impossible parameters, contract violations) and map to CLI exit code 1.
Anything else that escapes a command maps to exit code 2.

Every error raised on file content carries the offending 1-based line
number or the offending key so callers can point at the exact input.
"""

from __future__ import annotations


class SearchSigError(Exception):
    """Base class for all package errors."""


class ValidationError(SearchSigError):
    """Invalid input or parameters (CLI exit code 1)."""


# --- data_io ---------------------------------------------------------------

class MissingFile(ValidationError):
    """Input file does not exist."""


class MalformedRow(ValidationError):
    """A row violates the file format (field count, encoding, value rules)."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NonNumericCount(ValidationError):
    """Query-log count field failed to parse as an integer."""

    def __init__(self, line_no: int, text: str):
        super().__init__(f"line {line_no}: count {text!r} is not an integer")
        self.line_no = line_no


class DuplicateKey(ValidationError):
    """A (region_id, query_text) pair appears more than once."""

    def __init__(self, region_id: str, query_text: str):
        super().__init__(f"duplicate entry for region {region_id!r}, query {query_text!r}")
        self.region_id = region_id
        self.query_text = query_text


class NonFiniteValue(ValidationError):
    """Label value parsed to NaN or infinity."""

    def __init__(self, line_no: int, text: str):
        super().__init__(f"line {line_no}: value {text!r} is not finite")
        self.line_no = line_no


class UnknownRegion(ValidationError):
    """Region id not present in the geography at the required level."""

    def __init__(self, region_id: str):
        super().__init__(f"unknown region {region_id!r}")
        self.region_id = region_id


class IncompleteReport(ValidationError):
    """Report missing required content (e.g. empty per-fold list)."""


class IoFailure(SearchSigError):
    """Filesystem write failed (CLI exit code 2)."""


# --- spatial ---------------------------------------------------------------

class NoOverlap(ValidationError):
    """Zip has no overlap rows, so no county can be derived."""

    def __init__(self, zip_id: str):
        super().__init__(f"zip {zip_id!r} has no county overlap rows")
        self.zip_id = zip_id


class TooFewCounties(ValidationError):
    """Not enough counties to populate the requested split."""


class TooFewStates(ValidationError):
    """Fewer states than requested fold groups."""


# --- signature -------------------------------------------------------------

class EmptyInput(ValidationError):
    """Operation received an empty collection where content is required."""


class NoObservedSignatures(ValidationError):
    """Median fill has no observed signatures anywhere to fall back on."""


class EmptyCounty(ValidationError):
    """County has no non-absent member signatures to aggregate."""

    def __init__(self, county_fips: str):
        super().__init__(f"county {county_fips!r} has no non-absent signatures")
        self.county_fips = county_fips


class BadDimension(ValidationError):
    """Requested feature dimension outside [1, vocabulary size]."""


# --- models ----------------------------------------------------------------

class DegenerateData(ValidationError):
    """Too few samples or features to fit a model."""


class NonFiniteInput(ValidationError):
    """Feature matrix or target vector contains NaN/inf."""


class AllFoldsDegenerate(ValidationError):
    """No cross-validation fold was usable for tuning."""


class NoSites(ValidationError):
    """Distance-weighted model has no sites."""


class NoLabels(ValidationError):
    """Median model fit received no labeled regions."""


# --- evaluation ------------------------------------------------------------

class ZeroVariance(ValidationError):
    """Evaluated actuals have no variance; R-squared is undefined."""


class LengthMismatch(ValidationError):
    """Actual and predicted sequences differ in length."""


# --- harness ---------------------------------------------------------------

class EmptyTestSet(ValidationError):
    """Task configuration leaves nothing to evaluate."""


class LeakageError(SearchSigError):
    """Train and evaluation region sets intersect."""

    def __init__(self, context: str, offenders: list[str]):
        shown = ", ".join(sorted(offenders)[:5])
        super().__init__(f"{context}: train/eval sets share regions ({shown})")
        self.offenders = offenders


# --- synth -----------------------------------------------------------------

class SpecInvalid(ValidationError):
    """Synthetic world specification violates its invariants."""


class TooLarge(ValidationError):
    """World exceeds the exhaustive oracle's size guard."""


# --- cli -------------------------------------------------------------------

class UsageError(ValidationError):
    """Command line was parseable but incomplete or inconsistent."""
