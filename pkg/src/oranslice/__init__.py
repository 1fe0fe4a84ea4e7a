"""O-RAN slicing simulator with a diffusion-policy RL agent and baselines."""

__version__ = "0.1.0"
