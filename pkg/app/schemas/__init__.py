"""
Pydantic schemas for configuration, reports and run records
"""

from .potential import *
from .config import *
from .run import *
