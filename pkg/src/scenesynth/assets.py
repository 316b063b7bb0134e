"""Asset repository, hashed text embeddings, top-k retrieval and the
collector step that turns an instruction into a resolved scene decomposition.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import jsonio
from .errors import EmptyRepository, EmptyText, SchemaError, UnresolvableAsset
from .geometry import Vec3

EMBED_DIM = 256
MANIFEST_SCHEMA = 1

PREDICATES = ("on", "above", "left_of", "right_of", "in_front_of", "behind", "near", "inside")
HORIZONTAL_PREDICATES = ("left_of", "right_of", "in_front_of", "behind")
SUPPORT_PREDICATES = ("on", "inside")
NEAR_DEFAULT_M = 0.3

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _bucket(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % EMBED_DIM


def embed_text(text: str) -> np.ndarray:
    """Feature-hashed bag of tokens, L2-normalized."""
    tokens = tokenize(text)
    if not tokens:
        raise EmptyText(f"no tokens in {text!r}")
    v = np.zeros(EMBED_DIM, dtype=np.float64)
    for tok in tokens:
        v[_bucket(tok)] += 1.0
    return v / np.sqrt(np.dot(v, v))


@dataclass(frozen=True)
class AssetRecord:
    asset_id: str
    description: str
    tags: tuple[str, ...]
    canonical_dims: Vec3
    category: str
    support_surface: float | None = None
    embedding: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if min(self.canonical_dims) <= 0:
            raise ValueError(f"{self.asset_id}: canonical dims must be positive")
        if self.embedding is None:
            object.__setattr__(self, "embedding", embed_text(self.description))

    def vocabulary(self) -> set[str]:
        words = tokenize(self.description) + tokenize(self.category) + tokenize(self.asset_id)
        for tag in self.tags:
            words += tokenize(tag)
        return set(words)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.asset_id,
            "description": self.description,
            "tags": list(self.tags),
            "dims": list(self.canonical_dims),
            "category": self.category,
            "support_surface": self.support_surface,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AssetRecord":
        support = d.get("support_surface")
        return cls(
            asset_id=str(d["id"]),
            description=str(d["description"]),
            tags=tuple(d.get("tags", ())),
            canonical_dims=Vec3.of(d["dims"]),
            category=str(d["category"]),
            support_surface=None if support is None else float(support),
        )


class AssetRepository:
    """Immutable collection of assets, keyed by id, in manifest order."""

    def __init__(self, records: Iterable[AssetRecord]):
        self._records = tuple(records)
        self._by_id: dict[str, AssetRecord] = {}
        for r in self._records:
            if r.asset_id in self._by_id:
                raise ValueError(f"duplicate asset id {r.asset_id!r}")
            self._by_id[r.asset_id] = r
        self._matrix = (
            np.stack([r.embedding for r in self._records]) if self._records else np.zeros((0, EMBED_DIM))
        )

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __contains__(self, asset_id: str) -> bool:
        return asset_id in self._by_id

    def get(self, asset_id: str) -> AssetRecord:
        try:
            return self._by_id[asset_id]
        except KeyError:
            raise UnresolvableAsset(f"no asset with id {asset_id!r}") from None

    @property
    def records(self) -> tuple[AssetRecord, ...]:
        return self._records

    @property
    def embedding_matrix(self) -> np.ndarray:
        return self._matrix

    @classmethod
    def from_json(cls, data: str | bytes) -> "AssetRepository":
        doc = jsonio.loads(data)
        if doc.get("schema") != MANIFEST_SCHEMA:
            raise ValueError(f"unsupported asset manifest schema {doc.get('schema')!r}")
        return cls(AssetRecord.from_dict(a) for a in doc["assets"])

    def to_json(self) -> bytes:
        return jsonio.dump_bytes({"schema": MANIFEST_SCHEMA, "assets": [r.to_dict() for r in self._records]})

    @classmethod
    def load(cls, path: str | Path) -> "AssetRepository":
        return cls.from_json(Path(path).read_bytes())

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_json())

    @classmethod
    def demo(cls) -> "AssetRepository":
        data = resources.files("scenesynth").joinpath("data/assets.json").read_bytes()
        return cls.from_json(data)


def retrieve_top_k(repo: AssetRepository, query: str, k: int) -> list[tuple[AssetRecord, float]]:
    if len(repo) == 0:
        raise EmptyRepository("cannot retrieve from an empty repository")
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = repo.embedding_matrix @ embed_text(query)
    order = sorted(range(len(repo)), key=lambda i: (-scores[i], repo.records[i].asset_id))
    return [(repo.records[i], float(np.clip(scores[i], -1.0, 1.0))) for i in order[:k]]


@dataclass(frozen=True)
class SpatialConstraint:
    predicate: str
    subject: str
    reference: str
    param: float | None = None
    # camera index whose image axes define left/right/front/behind
    ref_view: int = 0

    def __post_init__(self) -> None:
        if self.predicate not in PREDICATES:
            raise ValueError(f"unknown predicate {self.predicate!r}")
        if self.subject == self.reference:
            raise ValueError("constraint subject and reference must differ")
        if self.predicate == "near" and self.param is None:
            object.__setattr__(self, "param", NEAR_DEFAULT_M)

    def key(self) -> str:
        return f"{self.predicate}({self.subject},{self.reference})"

    def to_dict(self) -> dict[str, Any]:
        return {
            "predicate": self.predicate,
            "subject": self.subject,
            "reference": self.reference,
            "param": self.param,
            "ref_view": self.ref_view,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SpatialConstraint":
        param = d.get("param")
        return cls(
            d["predicate"], d["subject"], d["reference"],
            None if param is None else float(param), int(d.get("ref_view", 0)),
        )


@dataclass(frozen=True)
class AssetRequest:
    label: str
    query: str
    asset_id: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"label": self.label, "query": self.query, "asset_id": self.asset_id}


@dataclass(frozen=True)
class SubScene:
    description: str
    requested_assets: tuple[AssetRequest, ...]
    constraints: tuple[SpatialConstraint, ...] = ()
    explicit_placements: tuple[tuple[str, Vec3], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "description": self.description,
            "assets": [a.to_dict() for a in self.requested_assets],
            "constraints": [c.to_dict() for c in self.constraints],
            "placements": [{"label": lbl, "position": list(p)} for lbl, p in self.explicit_placements],
        }


@dataclass(frozen=True)
class SceneDecomposition:
    sub_scenes: tuple[SubScene, ...]

    def __post_init__(self) -> None:
        if not self.sub_scenes:
            raise SchemaError("a decomposition needs at least one sub-scene")
        labels = [a.label for s in self.sub_scenes for a in s.requested_assets]
        if len(set(labels)) != len(labels):
            raise SchemaError(f"duplicate asset labels in {labels}")
        known = set(labels)
        for s in self.sub_scenes:
            for lbl, _ in s.explicit_placements:
                if lbl not in known:
                    raise SchemaError(f"placement references unrequested asset {lbl!r}")
            for c in s.constraints:
                if c.subject not in known or c.reference not in known:
                    raise SchemaError(f"constraint {c.key()} references unrequested asset")

    @property
    def requested_assets(self) -> list[AssetRequest]:
        return [a for s in self.sub_scenes for a in s.requested_assets]

    @property
    def constraints(self) -> list[SpatialConstraint]:
        return [c for s in self.sub_scenes for c in s.constraints]

    @property
    def explicit_placements(self) -> dict[str, Vec3]:
        return {lbl: p for s in self.sub_scenes for lbl, p in s.explicit_placements}

    def to_dict(self) -> dict[str, Any]:
        return {"sub_scenes": [s.to_dict() for s in self.sub_scenes]}

    def to_json(self) -> bytes:
        return jsonio.dump_bytes(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SceneDecomposition":
        try:
            subs = []
            for s in d["sub_scenes"]:
                subs.append(
                    SubScene(
                        description=str(s["description"]),
                        requested_assets=tuple(
                            AssetRequest(a["label"], a["query"], a.get("asset_id")) for a in s["assets"]
                        ),
                        constraints=tuple(SpatialConstraint.from_dict(c) for c in s.get("constraints", ())),
                        explicit_placements=tuple(
                            (p["label"], Vec3.of(p["position"])) for p in s.get("placements", ())
                        ),
                    )
                )
            return cls(tuple(subs))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"malformed scene decomposition: {exc}") from exc


@dataclass(frozen=True)
class InstructionInput:
    """Text instruction, optionally with explicit asset ids (the visual-input path)."""

    text: str
    asset_ids: tuple[str, ...] | None = None


def resolve_query(repo: AssetRepository, query: str, k: int = 3) -> AssetRecord:
    """Rank-1 of the top-k hits that share at least one token with the query."""
    words = set(tokenize(query))
    hits = [(r, s) for r, s in retrieve_top_k(repo, query, k) if words & r.vocabulary()]
    if not hits:
        raise UnresolvableAsset(f"no asset matches {query!r}")
    return hits[0][0]


def label_assets(asset_names: Sequence[str]) -> list[str]:
    """``cup, cup, table`` -> ``cup_1, cup_2, table``."""
    counts: dict[str, int] = {}
    for n in asset_names:
        counts[n] = counts.get(n, 0) + 1
    seen: dict[str, int] = {}
    out = []
    for n in asset_names:
        if counts[n] == 1:
            out.append(n)
        else:
            seen[n] = seen.get(n, 0) + 1
            out.append(f"{n}_{seen[n]}")
    return out


def collect(inp: InstructionInput, gateway, repo: AssetRepository, k: int = 3) -> SceneDecomposition:
    from .gateway import StructuredRequest, prompts

    req = StructuredRequest(
        role_tag="collector",
        prompt=prompts.collector_prompt(inp.text),
        expected_schema="SceneDecomposition",
        context={"instruction": inp.text},
    )
    decomposition = SceneDecomposition.from_dict(gateway.send(req))

    if inp.asset_ids is not None:
        return _attach_explicit(decomposition, inp, repo)

    subs = []
    for s in decomposition.sub_scenes:
        resolved = tuple(
            AssetRequest(a.label, a.query, resolve_query(repo, a.query, k).asset_id) for a in s.requested_assets
        )
        subs.append(SubScene(s.description, resolved, s.constraints, s.explicit_placements))
    return SceneDecomposition(tuple(subs))


def _attach_explicit(decomposition: SceneDecomposition, inp: InstructionInput, repo: AssetRepository):
    records = [repo.get(a) for a in inp.asset_ids]
    labels = label_assets([r.category for r in records])
    requests = tuple(AssetRequest(lbl, r.description, r.asset_id) for lbl, r in zip(labels, records))
    known = set(labels)
    constraints = tuple(
        c for c in decomposition.constraints if c.subject in known and c.reference in known
    )
    placements = tuple((lbl, p) for lbl, p in decomposition.explicit_placements.items() if lbl in known)
    desc = decomposition.sub_scenes[0].description
    return SceneDecomposition((SubScene(desc, requests, constraints, placements),))
