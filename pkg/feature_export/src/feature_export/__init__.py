"""Offline feature exporter: renders the 24 shared pose variants of a masked
image, runs a vision backbone on each, and writes FMAP files the matching
engine consumes."""

from .export import ExportJob, export_features
from .fmap import read_fmap, variant_filename, write_fmap

__version__ = "0.1.0"
