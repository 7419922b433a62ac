"""groundforge: referring-expression segmentation dataset tooling.

Automatic annotation (caption -> ground -> segment -> describe -> filter),
human-reviewed benchmark curation with quota assembly and a bbox twin, and
gIoU/cIoU/Acc@tau evaluation with per-category reports.
"""

__version__ = "0.1.0"
