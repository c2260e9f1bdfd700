"""
Synthetic data, pair sources and key-point files
"""
