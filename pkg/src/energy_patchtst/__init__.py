"""Multi-scale patch transformer for probabilistic energy forecasting.

Everything runs on a small reverse-mode autodiff engine over numpy
(``energy_patchtst.tensor``). The main entry points are ``model.init_model``,
``training.train`` / ``pretrain`` / ``finetune``, ``uncertainty.mc_forecast``
and the ``energy-patchtst`` command line.
"""

__version__ = "0.1.0"
