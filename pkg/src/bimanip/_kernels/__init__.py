"""Hot-kernel backend selection.

The compiled extension is preferred when it imported cleanly; setting
``BIMANIP_PURE=1`` in the environment forces the NumPy fallback.  Both
backends expose the same functions with identical semantics, pinned
against each other and against the public modules by the parity tests.
"""

import os

if os.environ.get("BIMANIP_PURE", "") == "1":
    from . import _fallback as _impl

    BACKEND = "pure"
else:
    try:
        from . import _speedups as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built on this install
        from . import _fallback as _impl

        BACKEND = "pure"

MODE_ABSOLUTE = _impl.MODE_ABSOLUTE
MODE_RELATIVE = _impl.MODE_RELATIVE

chain_pose = _impl.chain_pose
chain_jacobian = _impl.chain_jacobian
vel_bme = _impl.vel_bme
window_objective = _impl.window_objective
window_gradient = _impl.window_gradient


def backend_name() -> str:
    """Which implementation is live: "compiled" or "pure"."""
    return BACKEND
