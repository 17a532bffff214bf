"""Spectra of fourth-order beam operators under squeezed singular potentials.

Submodules
----------
shapes      regularization profiles (bump-poly family), moments, delta-likeness
odecore     adaptive integration kernel for u'''' + c(t) u = f(t)
resonance   resonant set, eigenfunctions w_alpha, coupling ratio theta
perturbed   composite-shooting spectra of the squeezed-potential operator
limit       decoupled and interface-coupled limit operators
asymptotics corrector hierarchy, quasimodes, convergence-rate reports
harness     experiment configs, orchestration, CSV/JSON emission
"""

from . import asymptotics, harness, limit, odecore, perturbed, resonance, shapes

__all__ = ["asymptotics", "harness", "limit", "odecore", "perturbed",
           "resonance", "shapes"]
__version__ = "0.1.0"
