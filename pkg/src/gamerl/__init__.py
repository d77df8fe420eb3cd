"""Snake and rotation game environments, labelers and trainers for visual-game RL data."""

__version__ = "0.1.0"
