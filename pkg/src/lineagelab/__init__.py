"""Cell lineage tracking, retrospective label propagation and detection
evaluation for time-lapse microscopy annotations."""

__version__ = "0.1.0"
