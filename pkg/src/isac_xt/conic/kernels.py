"""Selects the compiled cone projection when it was built, else the NumPy one."""
from ._kernels_py import Layout
from ._kernels_py import project as project_python

try:
    from ._kernels import project as _project_compiled
except ImportError:  # extension not built
    _project_compiled = None


def project_compiled(x, layout):
    # projection is idempotent, so redoing the whole vector after a LAPACK failure is safe
    if _project_compiled(x, layout) != 0:
        project_python(x, layout)


if _project_compiled is None:
    project_compiled = None  # noqa: F811

project = project_compiled or project_python
BACKEND = "compiled" if project_compiled is not None else "python"

__all__ = ["BACKEND", "Layout", "project", "project_compiled", "project_python"]
