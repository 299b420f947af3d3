"""
Test package for Files-DB-MCP
"""
