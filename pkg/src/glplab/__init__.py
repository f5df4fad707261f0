"""World models trained with latent-only or generative objectives, planners that
use them, and the experiment harness that compares the two."""

__version__ = "0.1.0"
