"""
Error types raised by shearflow.
Library code raises; the command layer turns these into failure records.
"""

from typing import Any, Dict, List, Optional


class ShearflowError(Exception):
    """Base class for every error raised by this package"""

    def details(self) -> Dict[str, Any]:
        return {}


class ParameterError(ShearflowError, ValueError):
    """Invalid model or numerical parameter (g, delta, mu, ...)"""


class MeshError(ShearflowError):
    """Degenerate geometry, inverted triangles or unreadable mesh files"""


class FieldError(ShearflowError, ValueError):
    """Role or length mismatch, or a Dirichlet dof carrying a nonzero value"""


class ConvergenceError(ShearflowError):
    """An iterative solver exhausted its budget"""

    def __init__(self, message: str, history: Optional[List[Dict[str, float]]] = None):
        super().__init__(message)
        self.history = list(history or [])

    @property
    def last_residual(self) -> Optional[float]:
        if not self.history:
            return None
        return self.history[-1].get("residual")

    def details(self) -> Dict[str, Any]:
        return {"iterations": len(self.history), "last_residual": self.last_residual}


class ConfigError(ShearflowError):
    """Run configuration rejected; `problems` lists every diagnostic"""

    def __init__(self, problems: List[Dict[str, Any]]):
        self.problems = problems
        lines = [
            f"[{p.get('key')}] (line {p.get('line', '?')}, expected {p.get('expected', '?')}): {p.get('message')}"
            for p in problems
        ]
        super().__init__("Invalid configuration:\n  " + "\n  ".join(lines))

    def details(self) -> Dict[str, Any]:
        return {"problems": self.problems}


class SolverError(ShearflowError):
    """A sparse factorization or linear solve failed"""
