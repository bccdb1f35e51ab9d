"""
Model Bundle
Every weight the pipeline needs, saved as one directory of JSON files.

Dimensions:
    token_dim  rows of the token matrix
    dim        span representation d
    common_dim evidence / image vector dim d_c
    pair_dim   2 * dim + 3 (pair features)
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from errors import ContractError
from fusion.projection import ProjectionHead, N_DISTANCE_FEATURES
from fusion.set_encoder import SetEncoder
from gating.groundability_gate import GateModel
from scoring.energy_decoder import ScoringHeads

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = 'saver-bundle'
BUNDLE_FORMAT_VERSION = 1

_PROJECTIONS = ('span_proj', 'ent_proj', 'pair_proj', 'fuse_ent', 'fuse_pair')


@dataclass(eq=False)
class ModelBundle:
    span_proj: ProjectionHead
    ent_proj: ProjectionHead
    pair_proj: ProjectionHead
    gate: GateModel
    set_encoder: SetEncoder
    fuse_ent: ProjectionHead
    fuse_pair: ProjectionHead
    heads: ScoringHeads

    def __post_init__(self):
        self.validate()

    @property
    def dim(self) -> int:
        return self.span_proj.dim_out

    @property
    def token_dim(self) -> int:
        return self.span_proj.dim_in // 3

    @property
    def common_dim(self) -> int:
        return self.ent_proj.dim_out

    @property
    def pair_dim(self) -> int:
        return 2 * self.dim + N_DISTANCE_FEATURES

    def validate(self):
        d, dc, dp = self.dim, self.common_dim, self.pair_dim
        checks = [
            (self.span_proj.dim_in % 3 == 0, "span_proj input must be 3 * token_dim"),
            (self.ent_proj.dim_in == d, "ent_proj input must be dim"),
            (self.pair_proj.dim_in == dp, "pair_proj input must be 2 * dim + 3"),
            (self.pair_proj.dim_out == dc, "pair_proj output must be common_dim"),
            (self.gate.dim == d, "gate weights must be dim + 4"),
            (self.set_encoder.dim == dc, "set encoder dim must be common_dim"),
            ((self.fuse_ent.dim_in, self.fuse_ent.dim_out) == (d + dc, d), "fuse_ent must map dim + common_dim to dim"),
            ((self.fuse_pair.dim_in, self.fuse_pair.dim_out) == (dp + dc, dp),
             "fuse_pair must map pair_dim + common_dim to pair_dim"),
            ((self.heads.dim, self.heads.pair_dim) == (d, dp), "scoring heads must take dim and pair_dim"),
        ]
        for ok, message in checks:
            if not ok:
                raise ContractError(f"Inconsistent bundle: {message}")

    @classmethod
    def seeded(cls, token_dim: int, dim: int, common_dim: int, n_types: int, n_relations: int,
               seed: int = 0, heads: int = 2, ff_dim: int = 32, **head_kwargs) -> 'ModelBundle':
        """Seeded random weights for every component"""
        pair_dim = 2 * dim + N_DISTANCE_FEATURES
        return cls(
            span_proj=ProjectionHead.seeded(3 * token_dim, dim, seed),
            ent_proj=ProjectionHead.seeded(dim, common_dim, seed + 1),
            pair_proj=ProjectionHead.seeded(pair_dim, common_dim, seed + 2),
            gate=GateModel.zeros(dim),
            set_encoder=SetEncoder.seeded(common_dim, heads, ff_dim, seed + 3),
            fuse_ent=ProjectionHead.seeded(dim + common_dim, dim, seed + 4),
            fuse_pair=ProjectionHead.seeded(pair_dim + common_dim, pair_dim, seed + 5),
            heads=ScoringHeads.seeded(dim, pair_dim, n_types, n_relations, seed + 6, **head_kwargs),
        )

    def save(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        for name in _PROJECTIONS:
            files[name] = f"{name}.json"
            _write_json(directory / files[name], getattr(self, name).to_dict())
        files['gate'] = 'gate.json'
        _write_json(directory / files['gate'], self.gate.to_dict())
        files['set_encoder'] = 'set_encoder.json'
        _write_json(directory / files['set_encoder'], self.set_encoder.to_dict())
        files['heads'] = 'scoring_heads.json'
        _write_json(directory / files['heads'], self.heads.to_dict())
        _write_json(directory / 'bundle.json',
                    {'format': BUNDLE_FORMAT, 'version': BUNDLE_FORMAT_VERSION, 'files': files})
        logger.info("Saved model bundle to %s", directory)
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> 'ModelBundle':
        directory = Path(directory)
        manifest = _read_json(directory / 'bundle.json')
        if manifest.get('format') != BUNDLE_FORMAT or manifest.get('version') != BUNDLE_FORMAT_VERSION:
            raise ContractError(f"{directory} is not a version {BUNDLE_FORMAT_VERSION} model bundle")
        files = manifest['files']
        parts = {name: ProjectionHead.from_dict(_read_json(directory / files[name])) for name in _PROJECTIONS}
        parts['gate'] = GateModel.from_dict(_read_json(directory / files['gate']))
        parts['set_encoder'] = SetEncoder.from_dict(_read_json(directory / files['set_encoder']))
        parts['heads'] = ScoringHeads.from_dict(_read_json(directory / files['heads']))
        return cls(**parts)


def _write_json(path: Path, record: dict):
    with open(path, 'w') as f:
        json.dump(record, f)


def _read_json(path: Path) -> dict:
    if not path.is_file():
        raise ContractError(f"Missing weight file {path}")
    with open(path, 'r') as f:
        return json.load(f)
