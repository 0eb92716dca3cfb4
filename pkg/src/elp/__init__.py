"""Energy loss prediction for wireless energy sharing between IoT devices."""

__version__ = "0.1.0"
