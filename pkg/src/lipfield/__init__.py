"""Plane-strain FE simulator for quasi-brittle fracture with a
Lipschitz-constrained damage field.

Damage lives on the Lip-mesh (the triangulation of element centroids) and is
updated by convex minimization inside bound-delimited patches, alternated with
displacement equilibrium in a staggered scheme.
"""

__version__ = "0.1.0"
