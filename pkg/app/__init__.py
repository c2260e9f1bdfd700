"""
py_objcode: sparse graph encoder for object-level descriptors
"""
