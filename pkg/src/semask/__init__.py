"""Task-aware semantic masking for bandwidth-constrained aerial image links.

Pipeline: segment a scene into a semantic mask, predict a learned keep/drop
mask jointly with a downstream task, transmit the run-length-coded masked
mask, and account for payload size and link latency.
"""

__version__ = "0.1.0"
