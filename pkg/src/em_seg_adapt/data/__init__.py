"""
Dataset loading, synthesis and patch sampling.
"""

from em_seg_adapt.data.sampling import sample_batch
from em_seg_adapt.data.sampling import sample_source
from em_seg_adapt.data.stacks import load_split
from em_seg_adapt.data.stacks import load_stack
from em_seg_adapt.data.stacks import normalize
from em_seg_adapt.data.stacks import read_dataset
from em_seg_adapt.data.stacks import save_stack
from em_seg_adapt.data.stacks import split_paths
from em_seg_adapt.data.stacks import split_target_x
from em_seg_adapt.data.stacks import stack_digest
from em_seg_adapt.data.stacks import write_dataset
from em_seg_adapt.data.synth import synth_domains

__all__ = [
    "load_split",
    "load_stack",
    "normalize",
    "read_dataset",
    "sample_batch",
    "sample_source",
    "save_stack",
    "split_paths",
    "split_target_x",
    "stack_digest",
    "synth_domains",
    "write_dataset",
]
