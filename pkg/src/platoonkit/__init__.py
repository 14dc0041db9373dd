"""Range-r vehicular platoon simulation and contraction-based disturbance bounds."""
__version__ = "0.1.0"
