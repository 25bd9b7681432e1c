"""Urban freight routing and dispatch platform.

Static VRPTW planning, time-dependent road networks, traffic forecasting,
dynamic rerouting on live events, fleet simulation and an HTTP dispatch API.
"""

__version__ = "0.1.0"
