"""Magnetic-field quenching of NV-center photoluminescence.

Modules: ``spectra`` (I/O and zones), ``photodyn`` (optical rate model),
``charge`` (charge-state models), ``inference`` (sequential Monte Carlo),
``separate`` (unmixing and linewidth), ``synth`` (synthetic pairs) and
``cli`` (batch pipeline).
"""

__version__ = "0.1.0"
