import numpy as np
import pytest
from numpy.testing import assert_array_equal

from src.utils.utils import decode_array, derive_seed, encode_array, relative_change, sanitize_filename


def test_sanitize_filename():
    assert sanitize_filename("mkmtrl n30/run 1") == "mkmtrl_n30_run_1"
    assert sanitize_filename('a:b*c?"d"') == "a_b_c_d"
    assert sanitize_filename("") == "unnamed"
    assert sanitize_filename("///") == "unnamed"
    assert len(sanitize_filename("x" * 400)) == 150


def test_derive_seed_is_counter_based():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)
    assert derive_seed(0, 1) != derive_seed(1, 1)


def test_relative_change():
    assert relative_change(np.array([3.0, 4.0]), np.array([3.0, 4.0])) == 0.0
    assert relative_change(np.array([3.0, 5.0]), np.array([3.0, 4.0])) == pytest.approx(0.2)
    assert np.isfinite(relative_change(np.ones(2), np.zeros(2)))


def test_encode_array_is_lossless():
    values = np.array([[0.1, -1e-300], [np.pi, 1.0 / 3.0]])
    payload = encode_array(values)
    assert payload["shape"] == [2, 2]
    assert_array_equal(decode_array(payload), values)
