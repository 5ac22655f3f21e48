"""Audio plus tactile content estimation and reactive grip control."""

try:
    from ._mmgrip import *  # noqa: F401,F403
    from . import _mmgrip as _ext
except ImportError:  # in-tree build: extension sits next to the package
    import _mmgrip as _ext
    from _mmgrip import *  # noqa: F401,F403

__doc__ = _ext.__doc__
