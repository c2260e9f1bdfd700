"""
Pydantic schemas package initialization
"""
