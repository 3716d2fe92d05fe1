"""Joint optimization of two-phase green splits and discrete link capacity
expansions: simulated annealing over a gradient projection user-equilibrium
assignment."""

__version__ = "0.1.0"
