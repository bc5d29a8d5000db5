"""Геоданные, симуляция, аналитические модели, синтетические RoI и планирование"""

from . import geodata, planner, sgmodels, simcore, synthgen

__all__ = ["geodata", "planner", "sgmodels", "simcore", "synthgen"]
