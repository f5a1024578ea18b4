"""Shared test fixtures.

Numeric contracts are stated for 64-bit floats, so every test runs under
the float64 default; the guard also restores the default after tests that
switch it (training runs in float32 and must not leak that choice).
"""

import pytest

from cmr.tensor.core import set_default_dtype


@pytest.fixture(autouse=True)
def float64_default():
    set_default_dtype("float64")
    yield
    set_default_dtype("float64")
