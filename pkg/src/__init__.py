import os

__version__ = "0.4.0"


def data_dir() -> str:
    """Return the vertex-radiosity data directory (for config and logs).

    Uses %APPDATA%/vertex-radiosity on Windows, ~/.vertex-radiosity on Unix.
    """
    if os.name == "nt":
        appdata = os.environ.get(
            "APPDATA", os.path.join(os.path.expanduser("~"), "AppData", "Roaming")
        )
        return os.path.join(appdata, "vertex-radiosity")
    return os.path.join(os.path.expanduser("~"), ".vertex-radiosity")
