"""Cross-lingual zero-shot emotion transfer TTS on a synthetic bilingual corpus."""

__version__ = "0.1.0"
