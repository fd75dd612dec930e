"""Aleatoric uncertainty benchmark toolkit."""

import json

from ._uqbench import *  # noqa: F401,F403
from ._uqbench import default_config as _default_config


def default_config():
    """Default benchmark configuration as a dict."""
    return json.loads(_default_config())
