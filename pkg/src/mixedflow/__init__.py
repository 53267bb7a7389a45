"""Traffic-light scheduling for mixed pedestrian and vehicle grid networks."""

__version__ = "0.1.0"
