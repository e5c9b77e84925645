"""Regularizer sensitivity sweeps: train the prior objective over a
(lambda, tau) grid, several seeds per cell, and export dev BLEU as CSV.

CSV columns (stable order): lambda, tau, seed, dev_bleu. A cell whose run
failed is recorded as "NA", never as a silent zero.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

from .config import ExperimentConfig
from .training import LMPrior, TMData, train_translator
from .tokenizer import SubwordModel


@dataclass
class SensitivityGrid:
    lambdas: list[float]
    taus: list[float]
    seeds: list[int]
    cells: dict[tuple[float, float, int], float | None] = field(default_factory=dict)

    def seed_scores(self, lam: float, tau: float) -> list[float | None]:
        return [self.cells[(lam, tau, s)] for s in self.seeds]

    def mean_bleu(self, lam: float, tau: float) -> float | None:
        scores = [s for s in self.seed_scores(lam, tau) if s is not None]
        return sum(scores) / len(scores) if scores else None

    @property
    def complete(self) -> bool:
        return all(v is not None for v in self.cells.values())

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("lambda,tau,seed,dev_bleu\n")
            for lam in self.lambdas:
                for tau in self.taus:
                    for seed in self.seeds:
                        value = self.cells[(lam, tau, seed)]
                        cell = "NA" if value is None else f"{value:.4f}"
                        fh.write(f"{lam},{tau},{seed},{cell}\n")


def sensitivity_sweep(
    cfg: ExperimentConfig,
    data: TMData,
    src_tokenizer: SubwordModel,
    tgt_tokenizer: SubwordModel,
    priors_by_seed: dict[int, LMPrior],
    lambdas: list[float],
    taus: list[float],
    seeds: list[int],
    out_dir: str | None = None,
    on_cell=None,
) -> SensitivityGrid:
    """Train one prior-objective model per (lambda, tau, seed) cell.

    The frozen LMs are shared across cells of the same seed, which is what
    makes a grid affordable: each cell only retrains the translation model.
    """
    grid = SensitivityGrid(list(lambdas), list(taus), list(seeds))
    base_dir = out_dir or tempfile.mkdtemp(prefix="nanomt-sweep-")
    os.makedirs(base_dir, exist_ok=True)
    for lam in lambdas:
        for tau in taus:
            for seed in seeds:
                cell_cfg = cfg.replace(objective="prior", lam=lam, tau=tau, seed=seed)
                cell_dir = os.path.join(base_dir, f"lam{lam}_tau{tau}_seed{seed}")
                try:
                    result = train_translator(
                        cell_cfg, data, src_tokenizer, tgt_tokenizer,
                        prior=priors_by_seed[seed] if lam > 0 else None,
                        out_dir=cell_dir,
                    )
                    grid.cells[(lam, tau, seed)] = result.best_metric
                except Exception as exc:  # a failed cell is a hole, not a zero
                    grid.cells[(lam, tau, seed)] = None
                    if on_cell:
                        on_cell(lam, tau, seed, None, exc)
                    continue
                if on_cell:
                    on_cell(lam, tau, seed, result.best_metric, None)
    grid.to_csv(os.path.join(base_dir, "sensitivity.csv"))
    return grid
