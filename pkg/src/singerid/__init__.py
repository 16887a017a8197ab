"""Singer-identification experiment pipeline.

Data preparation over pre-separated vocal/accompaniment stems,
shuffle-and-remix augmentation, two-branch convolutional-recurrent
classifiers with a quantized melody-contour plane, and segment/song-level
evaluation with vocalness analysis and embedding export.
"""

__version__ = "0.1.0"
