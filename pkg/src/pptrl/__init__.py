"""Task-space RL over movement-primitive weights with energy-tank gated impedance control."""

__version__ = "0.1.0"
