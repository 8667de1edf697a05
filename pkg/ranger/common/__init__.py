"""
Shared utilities for all ranger commands.
"""
