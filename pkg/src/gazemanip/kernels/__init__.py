"""Hot-kernel backend selection.

The compiled extension (``_core``, Cython) is preferred; the numpy fallback
(``_pure``) is used when the extension is unavailable or when
``GAZEMANIP_NO_EXT=1`` is set. Both expose the same two functions with
bit-identical outputs: ``reproject_scan`` and ``raycast``.
"""

import os

if os.environ.get("GAZEMANIP_NO_EXT") == "1":
    from . import _pure as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pure as _impl

reproject_scan = _impl.reproject_scan
raycast = _impl.raycast


def backend_name() -> str:
    """'compiled' when the Cython extension is active, else 'numpy'."""
    return _impl.BACKEND
