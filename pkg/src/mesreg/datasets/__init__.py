"""Small synthetic datasets shipped with the package.

``fit_example.csv``
    500 draws from the simulation design at seed 7; columns ``y, x, z1, z2``.
``erc_assets.csv``
    1744 periods of percent losses on five assets with a common stochastic
    volatility and correlated Student-t shocks; ``vol_lag`` is the trailing
    five-day average volatility known at the start of each day.

Both files are regenerated by ``scripts/make_datasets.py``.
"""
from importlib import resources

NAMES = ("fit_example.csv", "erc_assets.csv")


def path(name):
    """Filesystem path of a bundled dataset."""
    if name not in NAMES:
        raise KeyError(f"unknown dataset {name!r}; available: {', '.join(NAMES)}")
    return resources.files(__name__).joinpath(name)
