"""Two-stage decoupled diffusion for audio-driven talking head synthesis."""

__version__ = "0.1.0"
