"""
Integration tests for Files-DB-MCP
"""
