"""Latent-space refinement of pre-trained generators by a kernel-estimated
Wasserstein gradient flow, with the toy targets, networks and checks needed
to exercise it end to end."""

__version__ = "0.1.0"
