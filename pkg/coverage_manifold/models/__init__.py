"""Нейросетевой движок и CNN-автоэнкодер"""

from . import cnnae, neuralnet, weights_io

__all__ = ["cnnae", "neuralnet", "weights_io"]
