"""
Warehouse export of graph and analysis results through dlt.
"""
