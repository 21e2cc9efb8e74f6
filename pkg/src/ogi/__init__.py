"""Modular cognitive runtime: typed modality payloads move over a prioritized
multipath fabric between specialized modules; a weighting system scores and
routes by context; an autonomous area runs stored procedures while an
executive supervises through short-term memory and takes over on interrupts.
"""

__version__ = "0.1.0"
