"""
Unit tests for the entityprobes library.
"""
