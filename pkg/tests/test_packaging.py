# SPDX-License-Identifier: MIT


from importlib import metadata

import pytest

import rezone


class TestMetadata:
    def test_version(self):
        """
        rezone.__version__ returns the installed version.
        """
        assert metadata.version("rezone-sim") == rezone.__version__

    def test_title(self):
        """
        The distribution name is exposed.
        """
        assert "rezone-sim" == rezone.__title__

    def test_does_not_exist(self):
        """
        Asking for unsupported dunders raises an AttributeError.
        """
        with pytest.raises(
            AttributeError, match="module rezone has no attribute __yolo__"
        ):
            rezone.__yolo__  # noqa: B018
