#!/usr/bin/env python3
from .tensor import Tape, Tensor, as_tensor, backward, no_grad  # noqa: F401
