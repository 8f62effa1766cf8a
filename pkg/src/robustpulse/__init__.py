"""Smooth, noise-insensitive quantum gate pulses from neural parameterisations."""
import jax

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
