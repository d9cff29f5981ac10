"""Optical wireless downlink simulator for a data-centre pod served by RYGB
laser-diode light units, with angle-diversity and imaging receivers."""

__version__ = "0.1.0"
