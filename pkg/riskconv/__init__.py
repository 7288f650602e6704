"""
Weighted inf-convolutions of risk measures on finite probability spaces.
"""

__version__ = "1.0"
