from dataclasses import dataclass
from typing import Optional

from models.config import RCDConfig

"""
Counting convention: a multiply-add is 2 FLOPs and biases are free. One bilinear sample reads 4 values and does
3 lerps per channel (9 mul + 6 add), the gate adds one multiply per channel and a Gaussian pdf evaluation per sample.
"""
FLOPS_PER_SAMPLED_CHANNEL = 9 + 6 + 1
FLOPS_PER_PDF = 10
FLOPS_PER_NORM_ACT_CHANNEL = 6


@dataclass(frozen=True)
class FlopReport:
    """Per-pixel FLOPs of one block, stage by stage, next to a dense k x k convolution"""
    squeeze: int
    sampler: int
    passthrough: int
    final: int
    norm_act: int
    standard: int
    kernel: int

    @property
    def total(self) -> int:
        return self.squeeze + self.sampler + self.passthrough + self.final + self.norm_act

    @property
    def ratio(self) -> float:
        return self.standard / self.total

    def rows(self) -> list[tuple[str, int]]:
        return [("squeeze", self.squeeze), ("sampler", self.sampler), ("passthrough", self.passthrough),
                ("final", self.final), ("norm_act", self.norm_act), ("rcd_total", self.total),
                (f"standard_{self.kernel}x{self.kernel}", self.standard)]


def standard_conv_flops(kernel: int, c_in: int, c_out: int) -> int:
    return kernel * kernel * c_in * c_out * 2


def flop_count(c_in: int, c_out: int, sample_channels: int, n_samples: int, pass_channels: Optional[int] = None,
               kernel: int = 7) -> FlopReport:
    c_pass = c_out if pass_channels is None else pass_channels
    sampled = n_samples * sample_channels
    return FlopReport(
        squeeze=2 * c_in * sample_channels if n_samples > 0 else 0,
        sampler=n_samples * (sample_channels * FLOPS_PER_SAMPLED_CHANNEL + FLOPS_PER_PDF),
        passthrough=2 * c_in * c_pass,
        final=2 * (sampled + c_pass) * c_out,
        norm_act=FLOPS_PER_NORM_ACT_CHANNEL * c_out,
        standard=standard_conv_flops(kernel, c_in, c_out),
        kernel=kernel,
    )


def flop_count_for(config: RCDConfig, c_in: int = 64, c_out: int = 64, kernel: int = 7) -> FlopReport:
    return flop_count(c_in, c_out, config.sample_channels, config.n_samples, config.pass_channels, kernel)
