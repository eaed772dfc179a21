"""Figure generation for simulation CSV tables.

plotkit turns the delimited outputs of the simulation CLI into figures,
knowing only the published column layouts, never the solver itself.  Three
plot kinds cover the reporting needs: loglog for convergence sweeps,
timeseries for recorded trajectories and ratio envelopes, band for
median-with-quartiles summaries of Monte Carlo sweeps.  Rendering is a
pure function of the input files: fixed style, no clocks, byte-identical
when re-run on the same inputs.
"""

from .errors import PlotError
from .figures import KINDS, PlotSpec, render
from .tables import Table, read_table

__version__ = "0.1.0"

__all__ = [
    "KINDS",
    "PlotError",
    "PlotSpec",
    "Table",
    "read_table",
    "render",
    "__version__",
]
