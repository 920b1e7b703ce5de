"""Interactive 3D segmentation at desk scale.

Clicks become guide maps via distance transforms, a small encoder-decoder
network with a deep interactive module consumes them, and a simulated or
human interaction loop refines the segmentation; graph-cut and random-walk
baselines are included for comparison.
"""

__version__ = "0.1.0"
