"""Prioritized-information latent world models for distractor-robust
model-based RL: factored distractor MDPs, mutual-information bound
estimators, channel-capacity empowerment, a Lagrangian-constrained latent
world model, an empowerment-augmented planner, and a graph-kernel
behavioral-similarity metric.
"""

__version__ = "0.1.0"
