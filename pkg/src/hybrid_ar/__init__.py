"""Accent recognition with hybrid phonetic features."""
