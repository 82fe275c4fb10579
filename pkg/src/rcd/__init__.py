from rcd.block import RCDBlock, RCDParams, RCDState, rcd_block_forward, rcd_block_vjp
from rcd.flops import FlopReport, flop_count
from rcd.gating import soft_range_gate, soft_range_gate_vjp
from rcd.pattern import dilation_rate, grid_pattern, pattern_drift, transform_pattern
from rcd.sampler import BilinearStencil, bilinear_sample, bilinear_sample_vjp
