"""Distributed maximum-correntropy Kalman filtering over lossy sensor networks."""

__version__ = "0.1.0"
