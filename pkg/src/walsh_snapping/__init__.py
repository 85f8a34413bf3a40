"""
Walsh Snapping

Simulation and numerical-analysis toolkit for Walsh-type diffusions on star
graphs: Walsh Brownian motion, its snapping-out variant and thin-barrier
diffusions, together with discretized Dirichlet forms and the resolvent
convergence experiments built on them.
"""

__version__ = "1.0.0"
__author__ = "Ian Brooks"
__email__ = "support@example.com"
