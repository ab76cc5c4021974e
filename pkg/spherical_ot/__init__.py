# Spherical optimal transport: exact plans, reflectors and map recovery
