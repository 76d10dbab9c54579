"""cjdb: store CityJSONL in a three-table PostgreSQL/PostGIS schema."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
