"""Finite-difference validation of the transformer's analytic gradients.

Runs the model in float64, compares autograd gradients of the mean NLL
against central differences (h = 1e-5) on a random subset of parameter
coordinates. Where both the analytic and numeric gradients vanish the
relative error is defined as the absolute error.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch

from .training import _batch_nll
from .transformer import TransformerGenerator

_H = 1e-5
_ZERO_BAND = 1e-8


def grad_check(
    generator: TransformerGenerator,
    microbatch: Sequence[Sequence[int]],
    num_coords: int = 200,
    seed: int = 0,
    corrupt_gradients: Callable[[list[torch.Tensor]], None] | None = None,
) -> float:
    """Maximum relative error between analytic and numeric gradients.

    corrupt_gradients exists for mutation tests: it may modify the analytic
    gradient list in place before comparison.
    """
    module = generator.module.double()
    module.eval()  # dropout off: the loss must be deterministic
    ids = torch.nn.utils.rnn.pad_sequence(
        [torch.tensor(list(s), dtype=torch.long) for s in microbatch],
        batch_first=True,
    )
    mask = torch.nn.utils.rnn.pad_sequence(
        [torch.ones(len(s), dtype=torch.bool) for s in microbatch],
        batch_first=True,
    )

    params = [p for p in module.parameters() if p.requires_grad]
    module.zero_grad()
    loss = _batch_nll(module, ids, mask)
    loss.backward()
    grads = [p.grad.detach().clone() for p in params]
    if corrupt_gradients is not None:
        corrupt_gradients(grads)

    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(num_coords, total), replace=False)
    offsets = np.cumsum([0] + sizes)

    max_err = 0.0
    with torch.no_grad():
        for flat_index in picks:
            k = int(np.searchsorted(offsets, flat_index, side="right") - 1)
            local = int(flat_index - offsets[k])
            view = params[k].view(-1)
            original = view[local].item()
            view[local] = original + _H
            up = float(_batch_nll(module, ids, mask))
            view[local] = original - _H
            down = float(_batch_nll(module, ids, mask))
            view[local] = original
            numeric = (up - down) / (2 * _H)
            analytic = float(grads[k].view(-1)[local])
            denom = max(abs(numeric), abs(analytic))
            if denom < _ZERO_BAND:
                err = abs(numeric - analytic)
            else:
                err = abs(numeric - analytic) / denom
            max_err = max(max_err, err)
    module.float()
    return max_err
