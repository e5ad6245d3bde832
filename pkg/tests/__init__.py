"""
Tests for the PII Analyzer
""" 