"""Co-speech gesture generation: audio-text reprogramming, audio/action graph encoding and a recurrent GAN."""

__version__ = "0.1.0"
