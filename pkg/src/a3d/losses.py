"""Training objective: supervise the full network, distil into the sub-networks.

The full configuration's logits (detached) act as teacher for every sampled
sub-network in the same iteration; the students differ from the teacher in
width AND input resolution, so the distillation transfers across space, time
and channel capacity at once. Temperature is fixed at 1.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def distillation_kl(teacher_logits: torch.Tensor, student_logits: torch.Tensor) -> torch.Tensor:
    """KL(teacher || student) in nats, averaged over the batch.

    The teacher is detached: no gradient flows into the full network from the
    sub-network terms.
    """
    return F.kl_div(
        F.log_softmax(student_logits, dim=1),
        F.softmax(teacher_logits.detach(), dim=1),
        reduction="batchmean",
    )


def std_loss(full_logits: torch.Tensor, sub_logits: list[torch.Tensor],
             labels: torch.Tensor) -> tuple[torch.Tensor, dict]:
    """Cross-entropy on the full network plus one KL term per sub-network.

    Returns (total, parts) where parts holds detached floats for logging:
    {"ce": float, "kl": [float, ...]}.
    """
    ce = F.cross_entropy(full_logits, labels)
    total = ce
    kls = []
    for logits in sub_logits:
        kl = distillation_kl(full_logits, logits)
        total = total + kl
        kls.append(float(kl.detach()))
    return total, {"ce": float(ce.detach()), "kl": kls}
