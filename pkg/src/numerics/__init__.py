from numerics.gradcheck import GradCheckReport, grad_check
from numerics.ops import (Elu, LayerNorm, PointwiseConv, elu, elu_vjp, layer_norm, layer_norm_vjp, pointwise_conv,
                          pointwise_conv_vjp, sigmoid)
from numerics.tensor import FunctionOp, Op, Param, Tensor, dtype_of
