"""Annotation-free transparent-liquid segmentation and level-driven pouring.

Colored-liquid images are pseudo-labeled by background subtraction, translated
into transparent-liquid images with a contrastive unpaired translator, and the
(translated image, mask) pairs train a UNet whose masks drive a fill-level
estimator and a bang-bang pouring controller.
"""

__version__ = "0.1.0"
