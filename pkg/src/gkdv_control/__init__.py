"""Numerical laboratory for bilinear control of gKdV solitons."""
