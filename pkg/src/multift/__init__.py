"""Fluctuation theorems for multitime quantum processes.

Core modules:

- ``linalg``: dense complex linear algebra (eigendecompositions, partial
  trace, matrix powers, distance and divergence measures).
- ``opstate``: vectorized operators and superoperators with the
  Hilbert-Schmidt inner product; Choi tests for CP and TP.
- ``channels``: measurement bases, dephasing, rescaling maps, recovery maps,
  reference pairs, and random instance generators.
- ``closed``: unitary multitime processes, forward/backward joints, entropy
  production, detailed and integral FTs, chain identities.
- ``markov``: divisible (CPTP-step) processes and their quasiprobability FTs.
- ``nonmarkov``: dilated processes with an explicit environment, conditional
  environment states, history-dependent marginal FTs, negative-rate search.
- ``experiments``: seeded ensembles, oracles, and CSV reporting.
- ``service`` / ``cli``: HTTP and command-line front ends.
"""

__version__ = "0.1.0"
