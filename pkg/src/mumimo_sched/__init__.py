"""Multi-user MIMO sub-band scheduling with branching deep Q-networks.

The modules build on each other roughly in this order: ``action_space`` (per-sub-band
user sets), ``env_model`` and ``link_layer`` (channels, rates and the PF reward),
``features`` (network inputs), ``numerics`` and ``agents`` (hand-written networks),
``replay`` and ``training`` (value-decomposition DQN), ``baselines`` and ``evaluation``
(reference schedulers and scoring), and ``persistence`` plus ``cli`` for files and the
command line.
"""

__version__ = "0.1.0"
