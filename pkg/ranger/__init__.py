"""
ranger: vulnerability persistence analysis and version range restoration
for the Maven dependency graph.
"""

__version__ = "0.1.0"
