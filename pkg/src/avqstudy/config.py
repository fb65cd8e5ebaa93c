"""Deployment configuration: one declarative JSON file drives the CLI and
the server (paths, bind address, thresholds, stage layout, sampler
defaults)."""

from __future__ import annotations

import dataclasses
import json
import random
from collections.abc import Sequence as Vector
from dataclasses import dataclass
from pathlib import Path

from .domain import (
    EligibilityRule,
    FilterThresholds,
    Sequence,
    Stage,
    StageConfig,
)
from .errors import ConfigurationError

DEFAULT_ADMIN_TOKEN_ENV = "AVQ_ADMIN_TOKEN"


@dataclass(frozen=True)
class StudyConfig:
    store_dir: str = "store"
    export_dir: str = "exports"
    bind_host: str = "127.0.0.1"
    bind_port: int = 8000
    admin_token_env: str = DEFAULT_ADMIN_TOKEN_ENV
    media_base_url: str = "media/"
    assignment_expiry_minutes: float = 60.0
    group_size: int = 30
    pretest_sequences: int = 120
    grouping_seed: int = 0
    thresholds: FilterThresholds = FilterThresholds()
    eligibility: EligibilityRule = EligibilityRule()
    sampler_alpha: float = 0.3
    sampler_bins: int = 8
    sampler_intermediate_n: int = 10_000
    sampler_final_n: int = 1_296

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        thr = data.get("thresholds", {})
        elig = data.get("eligibility", {})
        smp = data.get("sampler", {})
        bind = data.get("bind", "127.0.0.1:8000")
        host, _, port = bind.rpartition(":")
        return cls(
            store_dir=data.get("store_dir", "store"),
            export_dir=data.get("export_dir", "exports"),
            bind_host=host or "127.0.0.1",
            bind_port=int(port) if port else 8000,
            admin_token_env=data.get("admin_token_env", DEFAULT_ADMIN_TOKEN_ENV),
            media_base_url=data.get("media_base_url", "media/"),
            assignment_expiry_minutes=float(data.get("assignment_expiry_minutes", 60.0)),
            group_size=int(data.get("group_size", 30)),
            pretest_sequences=int(data.get("pretest_sequences", 120)),
            grouping_seed=int(data.get("grouping_seed", 0)),
            thresholds=FilterThresholds(
                srocc_min=float(thr.get("srocc_min", 0.5)),
                std_min=float(thr.get("std_min", 0.5)),
            ),
            eligibility=EligibilityRule(
                min_approval_rate_pct=float(elig.get("min_approval_rate_pct", 97.0)),
                min_approved_hits=int(elig.get("min_approved_hits", 500)),
            ),
            sampler_alpha=float(smp.get("alpha", 0.3)),
            sampler_bins=int(smp.get("bins", 8)),
            sampler_intermediate_n=int(smp.get("intermediate_n", 10_000)),
            sampler_final_n=int(smp.get("final_n", 1_296)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "StudyConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_stage_configs(
    catalog: Vector[Sequence],
    config: StudyConfig,
) -> tuple[list[Sequence], dict[Stage, StageConfig]]:
    """Partition the catalog into stage groups.

    The catalog is shuffled with the grouping seed; the first
    ``pretest_sequences`` become the pretest groups, the rest the formal
    groups, and the qualification stage reuses the pretest groups under
    its own group ids (new subjects re-rate one pretest group against the
    established reference). Returns the catalog with home-group ids
    assigned, plus the per-stage configurations.
    """
    size = config.group_size
    if config.pretest_sequences % size:
        raise ConfigurationError(
            f"pretest_sequences={config.pretest_sequences} is not a "
            f"multiple of group_size={size}"
        )
    remainder = (len(catalog) - config.pretest_sequences) % size
    if len(catalog) < config.pretest_sequences or remainder:
        raise ConfigurationError(
            f"catalog of {len(catalog)} does not split into "
            f"{config.pretest_sequences} pretest + k*{size} formal sequences"
        )
    order = sorted(catalog, key=lambda s: s.id)
    random.Random(config.grouping_seed).shuffle(order)

    def chunk(items: list[Sequence], prefix: str) -> dict[str, tuple[str, ...]]:
        groups = {}
        for i in range(0, len(items), size):
            gid = f"{prefix}-g{i // size + 1:02d}"
            groups[gid] = tuple(s.id for s in items[i : i + size])
        return groups

    pretest_part = order[: config.pretest_sequences]
    formal_part = order[config.pretest_sequences :]
    pretest_groups = chunk(pretest_part, "pretest")
    formal_groups = chunk(formal_part, "formal")
    qualification_groups = {
        gid.replace("pretest", "qual", 1): members
        for gid, members in pretest_groups.items()
    }

    homed: list[Sequence] = []
    home: dict[str, str] = {}
    for groups in (pretest_groups, formal_groups):
        for gid, members in groups.items():
            for sid in members:
                home[sid] = gid
    for seq in catalog:
        homed.append(dataclasses.replace(seq, group_id=home[seq.id]))

    base = dict(
        group_size=size,
        thresholds=config.thresholds,
    )
    stage_configs = {
        Stage.PRETEST: StageConfig(
            stage=Stage.PRETEST,
            groups=pretest_groups,
            eligibility=config.eligibility,
            **base,
        ),
        Stage.QUALIFICATION: StageConfig(
            stage=Stage.QUALIFICATION,
            groups=qualification_groups,
            eligibility=config.eligibility,
            **base,
        ),
        Stage.FORMAL: StageConfig(
            stage=Stage.FORMAL,
            groups=formal_groups,
            eligibility=dataclasses.replace(config.eligibility, requires_qualified=True),
            **base,
        ),
    }
    return homed, stage_configs
