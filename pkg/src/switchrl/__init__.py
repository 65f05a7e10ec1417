"""Offline RL via evaluation-time policy switching.

Trains an ensemble-critic TD3 agent and a Gaussian behavioural-cloning
agent independently on a fixed dataset, then picks between their actions
at every evaluation step using the critic ensemble's disagreement scaled
by the dataset's measured spread. Includes seedable desk-scale
environments, dataset generators, and an offline-to-online fine-tuning
loop with a frozen BC anchor.
"""

__version__ = "0.1.0"
