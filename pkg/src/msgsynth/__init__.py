"""MSG-GAN synthesis of labeled image patches and real-vs-synthetic evaluation."""

__version__ = "0.1.0"
