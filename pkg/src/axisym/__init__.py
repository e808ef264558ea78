"""Long-time asymptotics of axisymmetric vorticity in self-similar variables."""
__version__ = "0.1.0"
