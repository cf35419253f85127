"""Cross-LiDAR domain adaptation for a lite BEV center detector.

Subpackages: ``scene_sim`` (dual-sensor simulator and benchmark splits),
``detector`` (trainable BEV detector). Modules: ``pointops``, ``alignment``,
``prototype``, ``metrics``, ``pipeline``, ``cli``.
"""

__version__ = "0.1.0"
