"""Zero-shot instance segmentation toolkit.

Submodules:

* ``annotations``: COCO ingestion and seen/unseen split construction
* ``maskgeom``: binary masks, COCO RLE, polygon rasterization, IoU
* ``metrics``: Recall@K, mAP and harmonic means for the ZSD/ZSI/GZSD/GZSI settings
* ``semheads``: semantic heads, background synchronization, loss and gradients
* ``synthlab``: synthetic transfer experiments
* ``cli``: the ``zsikit`` command
"""

__version__ = "0.1.0"
