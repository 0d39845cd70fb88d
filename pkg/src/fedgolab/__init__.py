"""Federated ensemble distillation with discriminator-odds client weighting, plus theory checks."""

__version__ = "0.1.0"
