"""Simulation and analysis tools for the parabolic Anderson model in 1+1 dimensions.

Modules
-------
noise       counter-addressed Gaussian noise
she         lattice solvers and ensembles
kpz         Cole--Hopf heights and the rescaled narrow-wedge field
level_sets  valley sets, stretching, pixelation, benchmark sets
hausdorff   macroscopic Hausdorff content and dimension estimates
tails       tail probabilities, moment exponents, distributional checks
config, runner, cli
            experiment configuration, pipelines and the command line
"""

__version__ = "0.1.0"
