"""SFT and DPO objectives evaluated on supplied log-probabilities.

All log-probabilities are natural logs. Nothing here touches a model: the
functions exist to check a trainer's numbers and to inspect preference data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ConfigError, EmptyBatch, InvalidLogProb


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ConfigError(f"beta must be finite and positive, got {self.beta}")


@dataclass(frozen=True)
class DpoExample:
    policy_logp_w: float
    ref_logp_w: float
    policy_logp_l: float
    ref_logp_l: float
    query_id: str | None = None

    def __post_init__(self):
        for name in ("policy_logp_w", "ref_logp_w", "policy_logp_l", "ref_logp_l"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise InvalidLogProb(f"{name} must be a finite number, got {v!r}")


def softplus(x: float) -> float:
    """log(1 + e^x) without overflow."""
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sft_loss(token_logps: Sequence[float]) -> float:
    """Autoregressive cross-entropy: minus the summed token log-probs."""
    if len(token_logps) == 0:
        raise InvalidLogProb("sequence has no tokens")
    for lp in token_logps:
        if not math.isfinite(lp) or lp > 0:
            raise InvalidLogProb(f"token log-prob must be finite and <= 0, got {lp!r}")
    return -math.fsum(token_logps)


def dpo_margin(ex: DpoExample, cfg: DpoConfig = DpoConfig()) -> float:
    return cfg.beta * ((ex.policy_logp_w - ex.ref_logp_w) - (ex.policy_logp_l - ex.ref_logp_l))


def dpo_loss_from_margin(margin: float) -> float:
    return softplus(-margin)


def dpo_loss(ex: DpoExample, cfg: DpoConfig = DpoConfig()) -> float:
    return softplus(-dpo_margin(ex, cfg))


def dpo_loss_grad_wrt_margin(margin: float) -> float:
    """d/dm of -log sigmoid(m), i.e. sigmoid(m) - 1, computed as -sigmoid(-m)."""
    return -sigmoid(-margin)


@dataclass(frozen=True)
class DpoReport:
    n: int
    beta: float
    mean_loss: float
    mean_margin: float
    implicit_accuracy: float

    def to_json(self) -> dict:
        return {"n": self.n, "beta": self.beta, "mean_loss": self.mean_loss,
                "mean_margin": self.mean_margin, "implicit_accuracy": self.implicit_accuracy}


def batch_dpo_report(examples: Sequence[DpoExample], cfg: DpoConfig = DpoConfig()) -> DpoReport:
    if not examples:
        raise EmptyBatch("no DPO examples")
    margins = [dpo_margin(ex, cfg) for ex in examples]
    n = len(margins)
    return DpoReport(
        n=n,
        beta=cfg.beta,
        mean_loss=math.fsum(softplus(-m) for m in margins) / n,
        mean_margin=math.fsum(margins) / n,
        implicit_accuracy=sum(m > 0 for m in margins) / n,
    )


def load_dpo_examples(lines: Iterable[str]) -> list[DpoExample]:
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append(DpoExample(rec["policy_logp_w"], rec["ref_logp_w"], rec["policy_logp_l"],
                                  rec["ref_logp_l"], rec.get("query_id")))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InvalidLogProb(f"line {lineno}: {exc}") from None
    return out
