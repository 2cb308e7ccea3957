"""Storage sizing for price-volatility control in nodal Cournot electricity markets."""
from importlib import resources

__version__ = "0.1.0"


def bundled_instance(name: str = "sa_vic"):
    """Path of an instance file shipped with the package."""
    return resources.files(__package__) / "data" / f"{name}.json"
