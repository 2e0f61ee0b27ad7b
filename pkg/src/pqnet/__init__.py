"""pqnet: batched quanvolutional classifier for fingerprinting quantum state
generators, with MUB measurement strategies and noise-robustness tooling."""

__version__ = "0.1.0"
