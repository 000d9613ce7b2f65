"""Testing utilities for difftime."""

from __future__ import annotations

from difftime.testing import utils
from difftime.testing.helpers import *
