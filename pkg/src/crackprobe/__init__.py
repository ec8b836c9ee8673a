"""crackprobe: numerical laboratory for the 2-D impedance-crack inverse problem.

Forward mixed Dirichlet/Robin crack solver, discrete boundary maps, singular
probe fields, crack detection and empirical stability sweeps.
"""

__version__ = "0.1.0"
