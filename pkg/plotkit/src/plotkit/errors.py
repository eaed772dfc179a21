"""The one failure type callers need to catch.

PlotError covers everything wrong with the request or the table content:
unknown kind, missing or unparsable columns, empty input, unsupported
output format.  The CLI maps it to exit code 1; operating-system failures
(unreadable input, unwritable output) stay OSError and map to exit code 2.
"""


class PlotError(ValueError):
    """The plot request or an input table violated the documented contract."""
