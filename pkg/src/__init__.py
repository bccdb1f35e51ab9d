"""Selective Vision Evidence Routing for Multimodal Information Extraction"""
__version__ = '1.0.0'
