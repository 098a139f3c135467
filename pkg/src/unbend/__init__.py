"""Recover the undeformed shape of bent slender bodies from one image.

Two independent methods straighten a body mask: neutral-line detection
(``unbend.neutral``) and morphological inversion of the deformation
(``unbend.morph``).  ``unbend.classify`` groups straightened profiles by
tuned prototype curves; ``unbend.synth`` bends templates with known ground
truth.
"""

__version__ = "0.1.0"
