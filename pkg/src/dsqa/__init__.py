"""Discrete sequence autoencoding: semantic-hashing bottlenecks, convolutional
sequence compression, latent-prefixed language models and mixed sample-beam
decoding, on a self-contained numpy autodiff engine."""

__version__ = "0.1.0"
