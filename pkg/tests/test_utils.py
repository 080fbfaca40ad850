# SPDX-License-Identifier: MIT

import pytest

from hypothesis import given
from hypothesis import strategies as st

from rezone._utils import _check_types, env_int, measure


class TestCheckTypes:
    def test_success(self):
        """
        Returns None if all types are okay.
        """
        assert None is _check_types(
            int=(1, int),
            tuple=((1, 2), tuple),
            str_or_None=(None, (str, type(None))),
        )

    def test_fail(self):
        """
        Returns summary of failures.
        """
        rv = _check_types(
            int=("not int", int), str_or_None=(42, (str, type(None)))
        )

        assert "." == rv[-1]  # proper grammar FTW
        assert "'str_or_None' must be a str, or NoneType (got int)" in rv

        assert "'int' must be a int (got str)" in rv

    def test_bool_is_no_int(self):
        """
        Booleans don't pass for counts or addresses.
        """
        assert "'depth' must be a int (got bool)." == _check_types(
            depth=(True, int)
        )


class TestMeasure:
    def test_known(self):
        """
        Measurements are hex BLAKE2b-256 digests.
        """
        m = measure([1, 2, 3])

        assert 64 == len(m)
        assert int(m, 16) >= 0

    def test_order_matters(self):
        """
        Swapped words measure differently.
        """
        assert measure([1, 2]) != measure([2, 1])

    @given(st.lists(st.integers(0, 2**64 - 1), max_size=8), st.integers(0, 7))
    def test_any_flip_changes(self, words, i):
        """
        Flipping a single bit in any word changes the measurement.
        """
        if not words:
            words = [0]
        i %= len(words)
        tampered = [*words]
        tampered[i] ^= 1

        assert measure(words) != measure(tampered)

    def test_words_are_64_bit(self):
        """
        Words are truncated to 64 bits.
        """
        assert measure([2**64 + 5]) == measure([5])


class TestEnvInt:
    def test_default(self, monkeypatch):
        """
        Unset or empty variables yield the default.
        """
        monkeypatch.delenv("REZONE_TEST_INT", raising=False)

        assert 7 == env_int("REZONE_TEST_INT", 7)

        monkeypatch.setenv("REZONE_TEST_INT", " ")

        assert 7 == env_int("REZONE_TEST_INT", 7)

    def test_set(self, monkeypatch):
        """
        Set variables are parsed.
        """
        monkeypatch.setenv("REZONE_TEST_INT", "42")

        assert 42 == env_int("REZONE_TEST_INT", 7)

    @pytest.mark.parametrize("raw", ["0", "-3", "many"])
    def test_invalid(self, monkeypatch, raw):
        """
        Non-positive and non-numeric values are refused.
        """
        monkeypatch.setenv("REZONE_TEST_INT", raw)

        with pytest.raises(ValueError):
            env_int("REZONE_TEST_INT", 7)
