"""Pump-and-dump labeling, text classification and attribution."""
