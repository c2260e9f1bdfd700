"""
Encoder parameters, forward pass, baseline encoder and descriptor database
"""
