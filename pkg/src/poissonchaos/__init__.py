"""Moments, cumulants and central limit checks for Poisson functionals.

Submodules
----------
partitions  diagram partitions of row layouts
measure     measure spaces, kernels and integration
poisson     Poisson process simulation and the Mecke formula
chaos       pathwise multiple Wiener-Ito integrals and chaos kernels
moments     mixed moments and cumulants via diagram sums
ustat       Poisson U-statistics, normalization and d3 diagnostics
flats       Poisson k-flat processes and intersection functionals
"""

__version__ = "0.1.0"

from .measure import AtomicSpace, BoxSpace, IntegralEstimate, Kernel, Method, constant_kernel
from .partitions import RowLayout, Subpartition, count_partitions, enumerate_partitions
from .poisson import PointConfiguration, factorial_sum, sample_poisson
from .chaos import chaos_kernel, wiener_ito
from .moments import joint_cumulant, mixed_moment
from .ustat import NormalizedFamily, UStatistic, d3_bound, d3_surrogate

__all__ = [
    "AtomicSpace",
    "BoxSpace",
    "IntegralEstimate",
    "Kernel",
    "Method",
    "NormalizedFamily",
    "PointConfiguration",
    "RowLayout",
    "Subpartition",
    "UStatistic",
    "chaos_kernel",
    "constant_kernel",
    "count_partitions",
    "d3_bound",
    "d3_surrogate",
    "enumerate_partitions",
    "factorial_sum",
    "joint_cumulant",
    "mixed_moment",
    "sample_poisson",
    "wiener_ito",
]
