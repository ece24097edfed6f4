"""Two-level variable-horizon MPC for bipedal walking."""

__version__ = "0.1.0"
