# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import importlib
from typing import Callable

from packaging.version import parse


def get_plotting_function(
    plot_name: str, plot_module: str, backend: str = "matplotlib"
) -> Callable:
    """Return the plotting function of the requested backend.

    Parameters
    ----------
    plot_name :
        Name of the function inside the backend module.
    plot_module :
        Name of the backend module (e.g. `"plot_wafer"`).
    backend :
        `"matplotlib"` (or `"mpl"`) or `"bokeh"`.

    Raises
    ------
    KeyError
        If the backend is unknown.
    ImportError
        If Bokeh is requested but missing or older than 1.4.0.

    """

    _backend = {
        "mpl": "matplotlib",
        "bokeh": "bokeh",
        "matplotlib": "matplotlib",
    }

    backend = backend.lower()

    try:
        backend = _backend[backend]
    except KeyError as err:
        raise KeyError(
            "Backend {} is not implemented. Try backend in {}".format(
                backend, set(_backend.values())
            )
        ) from err

    if backend == "bokeh":
        try:
            import bokeh

            assert parse(bokeh.__version__) >= parse("1.4.0")

        except (ImportError, AssertionError) as err:
            raise ImportError(
                "'bokeh' backend needs Bokeh (1.4.0+) installed."
                " Please upgrade or install"
            ) from err

    module = importlib.import_module(
        "qflow.plots.backends.{backend}.{plot_module}".format(
            backend=backend, plot_module=plot_module
        )
    )

    return getattr(module, plot_name)
