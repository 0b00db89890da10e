"""Multi-band (RF + THz) network simulator with FeMBB/eURLLC services,
value-based deep RL solvers for the joint network-selection and
subchannel-allocation problem, and an exact search baseline."""

__version__ = "0.1.0"
