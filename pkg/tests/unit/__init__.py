"""
Unit tests for Files-DB-MCP
"""
