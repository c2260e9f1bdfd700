"""
Matching, relocalization, sparsity and runtime evaluation
"""
