# SPDX-License-Identifier: MIT

import pytest

from rezone.profiles import (
    A53_GEOMETRY,
    CHEAPEST,
    DEFAULT,
    by_name,
    get_default_config,
)


class TestProfiles:
    @pytest.mark.parametrize(
        ("name", "geometry"),
        [("default", DEFAULT), ("a53", A53_GEOMETRY), ("cheapest", CHEAPEST)],
    )
    def test_by_name(self, name, geometry):
        """
        Profiles are looked up by lower-case name and returned as copies.
        """
        g = by_name(name)

        assert geometry == g
        assert geometry is not g

    def test_unknown(self):
        """
        Unknown names raise KeyError.
        """
        with pytest.raises(KeyError):
            by_name("huge")

    def test_default_config(self):
        """
        The default configuration uses a private copy of the default
        geometry.
        """
        config = get_default_config()
        config.geometry.cores = 1

        assert DEFAULT == get_default_config().geometry
        assert 4 == DEFAULT.cores
