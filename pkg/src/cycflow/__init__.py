"""Deterministic geometric flow solver for Euclidean TSP.

Learn an instance-conditioned velocity field that transports the input
points onto a circle whose arc ordering encodes the tour; read the tour
back by sorting polar angles and polish it with 2-opt.
"""

__version__ = "0.1.0"

from .instances import (
    Dataset,
    DatasetRecord,
    Instance,
    Tour,
    gap_percent,
    gen_uniform,
    read_dataset,
    tour_length,
    write_dataset,
)

__all__ = [
    "Dataset",
    "DatasetRecord",
    "Instance",
    "Tour",
    "__version__",
    "gap_percent",
    "gen_uniform",
    "read_dataset",
    "tour_length",
    "write_dataset",
]
