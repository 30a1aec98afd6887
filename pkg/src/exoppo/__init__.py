"""Generation-buffer PPO variant with an exponentially-edged surrogate objective."""

__version__ = "0.1.0"
