"""Multi-feature Tacotron-style text-to-speech: phone, word-embedding and parse-tree inputs."""

__version__ = "0.1.0"
