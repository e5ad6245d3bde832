"""
Core orchestration support: worker pools and run manifests
"""
