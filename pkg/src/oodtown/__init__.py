"""Desk-scale autonomous-driving safety stack.

A differential-drive robot sim with a pinhole camera feeds three
concurrent tasks: a classical lane follower, a small grid object
detector, and an optical-flow VAE that watches for out-of-distribution
input and latches an emergency stop. Training, int8 quantization,
preprocessing search, and response-time tracing live in the submodules;
the `oodtown` command ties them together.
"""

__version__ = "0.1.0"
