"""avbridge: dual-tower audio/video latent diffusion with trainable
cross-modal bridge blocks, at desk scale."""

__version__ = "0.1.0"
