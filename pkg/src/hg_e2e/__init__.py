"""Human-guidance-augmented end-to-end driving on a synthetic world."""

__version__ = "0.1.0"
