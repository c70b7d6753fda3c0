"""Pydantic schemas for persisted documents, reports and experiment tables."""
