"""Brain-tumor segmentation engine: attention-fused 3D U-Net on numpy."""

__version__ = "1.0.0"
