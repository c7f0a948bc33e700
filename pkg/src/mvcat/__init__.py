# __all__ = ["design", "likelihood", "prox", "solver", "tuning", "simulate", "io"]
__version__ = "0.1.0"
