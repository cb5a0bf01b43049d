"""Clinker phase prediction toolkit: synthetic plant data, stream alignment,
cleaning, nine regression families, linear phase equations and Shapley
attributions."""

__version__ = "0.1.0"

from .datamodel import Dataset, FeatureSetSpec, RawStreams, expand_feature_sets  # noqa: E402,F401
from .models import FAMILIES, fit_model, load_model  # noqa: E402,F401
