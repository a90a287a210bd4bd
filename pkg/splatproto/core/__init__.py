"""Core pipeline: I/O, numerics, networks, training, explanations, metrics"""
