"""Exception types shared across the package.

Each class carries an ``exit_code`` so the command line can map failures to a
category-coded process status.
"""


class SpdlabError(Exception):
    exit_code = 1


class InvalidArgument(SpdlabError, ValueError):
    exit_code = 2


class DataError(SpdlabError):
    """Malformed or missing input data (corpus, dataset record, logit store)."""

    exit_code = 3


class InternalError(SpdlabError, AssertionError):
    exit_code = 4
