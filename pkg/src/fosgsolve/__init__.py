"""Tabular imperfect-information game solving: CFR family, sub-game re-solving and evaluation."""

__version__ = "0.1.0"
