"""edgeorch: joint placement and routing optimization for hybrid AI/microservice chains."""

__version__ = "0.1.0"
