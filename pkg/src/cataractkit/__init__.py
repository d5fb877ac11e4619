"""Cataract-surgery video analysis toolkit: segmentation blocks and networks,
training objectives, contrastive pretraining, temporal post-processing,
relevance-based QP planning and deblurring simulation."""

__version__ = "0.1.0"
