"""SIBRA: scalable inter-domain bandwidth reservations.

Library modules: ``classes`` (shared vocabulary), ``tokens`` (onion MACs and
header codec), ``fairshare``, ``router``, ``monitor``, ``contracts``;
``simnet`` holds the discrete-event simulator and ``cli`` the front end.
"""

__version__ = "0.1.0"
