"""Lmser: bidirectional autoencoder engine with shared weights and paired neurons"""
__version__ = "1.0.0"
