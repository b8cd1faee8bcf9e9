"""HPO ontology parsing and dictionary flattening.

Reads OBO flat files or obographs JSON, keeps the observable part of the
ontology (descendants of the phenotypic-abnormality root) and flattens names
and synonyms into a (surface, HPO id) lexicon for normalization.
"""

import hashlib
import json
import logging
import re
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

from .exceptions import (
    ConfigurationError,
    DataError,
    FormatError,
    OntologyParseError,
    OntologyValidationError,
)

logger = logging.getLogger(__name__)

PHENOTYPIC_ABNORMALITY = "HP:0000118"
DEFAULT_VERSION_TAG = "v2022-06-11"

HPO_ID_PATTERN = re.compile(r"^HP:\d{7}$")
_SYNONYM_PATTERN = re.compile(r'^"((?:[^"\\]|\\.)*)"\s*([A-Z_]+)?')
_OBO_IRI_PATTERN = re.compile(r"^https?://purl\.obolibrary\.org/obo/([A-Za-z]+)_(\w+)$")
_REPLACED_BY_PREDICATES = {
    "http://purl.obolibrary.org/obo/IAO_0100001",
    "IAO:0100001",
    "replaced_by",
}

PathLike = Union[str, Path]


@dataclass(frozen=True)
class HpoTerm:
    id: str
    name: str
    synonyms: Tuple[str, ...] = ()
    parents: Tuple[str, ...] = ()
    obsolete: bool = False
    replaced_by: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "synonyms", tuple(self.synonyms))
        object.__setattr__(self, "parents", tuple(self.parents))


def normalize_surface(text: str) -> str:
    """Lowercase, collapse internal whitespace, trim."""
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class FlatDictionary:
    """Flattened normalization lexicon, entries sorted by (surface, hpo_id)."""

    entries: Tuple[Tuple[str, str], ...]
    version_tag: str = DEFAULT_VERSION_TAG
    _by_id: Dict[str, List[str]] = field(
        default_factory=dict, init=False, compare=False, repr=False
    )

    def __post_init__(self):
        entries = tuple(sorted((str(s), str(i)) for s, i in self.entries))
        if len(set(entries)) != len(entries):
            raise DataError("Duplicate (surface, hpo_id) pairs in dictionary")
        for surface, _ in entries:
            if surface != normalize_surface(surface) or not surface:
                raise DataError(f"Dictionary surface is not normalized: {surface!r}")
        object.__setattr__(self, "entries", entries)
        by_id: Dict[str, List[str]] = defaultdict(list)
        for surface, hpo_id in entries:
            by_id[hpo_id].append(surface)
        object.__setattr__(self, "_by_id", dict(by_id))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def surfaces(self) -> List[str]:
        return [surface for surface, _ in self.entries]

    @property
    def ids(self) -> List[str]:
        return [hpo_id for _, hpo_id in self.entries]

    def hpo_ids(self) -> Set[str]:
        return set(self._by_id)

    def synonyms_of(self, hpo_id: str) -> List[str]:
        return list(self._by_id.get(hpo_id, []))

    def to_tsv(self) -> str:
        return "".join(f"{surface}\t{hpo_id}\n" for surface, hpo_id in self.entries)

    def checksum(self) -> str:
        return hashlib.sha256(self.to_tsv().encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Parsing


def parse_ontology(source: PathLike) -> Dict[str, HpoTerm]:
    """Parse an OBO or obographs JSON file, chosen by extension."""
    path = Path(source)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        terms = parse_obographs(text, path=str(path))
    else:
        terms = parse_obo(text, path=str(path))
    validate_parents(terms)
    logger.info("Parsed %d terms from %s", len(terms), path)
    return terms


def _unescape(value: str) -> str:
    return re.sub(r"\\(.)", r"\1", value)


def _strip_comment(value: str) -> str:
    # `is_a: HP:0000001 ! All` and trailing qualifier blocks
    value = value.split(" !", 1)[0]
    return value.split(" {", 1)[0].strip()


def parse_obo(text: str, path: str = "<obo>") -> Dict[str, HpoTerm]:
    """Parse OBO 1.2/1.4 text. Only [Term] stanzas become terms."""
    terms: Dict[str, HpoTerm] = {}
    stanza: Optional[dict] = None
    stanza_type: Optional[str] = None

    def finish():
        if stanza is None or stanza_type != "Term":
            return
        line = stanza["line"]
        if "id" not in stanza:
            raise OntologyParseError("[Term] stanza without id", line, path)
        if not stanza.get("name"):
            raise OntologyParseError(f"Term {stanza['id']} has no name", line, path)
        if stanza["id"] in terms:
            raise OntologyParseError(f"Duplicate term id {stanza['id']}", line, path)
        terms[stanza["id"]] = HpoTerm(
            id=stanza["id"],
            name=stanza["name"],
            synonyms=tuple(stanza["synonyms"]),
            parents=tuple(stanza["parents"]),
            obsolete=stanza["obsolete"],
            replaced_by=stanza.get("replaced_by"),
        )

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("!"):
            continue
        if line.startswith("[") and line.endswith("]"):
            finish()
            stanza_type = line[1:-1].strip()
            stanza = {"line": number, "synonyms": [], "parents": [], "obsolete": False}
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise OntologyParseError(f"Expected 'tag: value', got {line!r}", number, path)
        if stanza is None or stanza_type != "Term":
            continue  # header or [Typedef] content
        key, value = key.strip(), value.strip()
        if key == "id":
            if not HPO_ID_PATTERN.match(value):
                raise OntologyParseError(f"Invalid HPO id {value!r}", number, path)
            stanza["id"] = value
        elif key == "name":
            stanza["name"] = value
        elif key == "synonym":
            match = _SYNONYM_PATTERN.match(value)
            if not match:
                raise OntologyParseError(f"Malformed synonym {value!r}", number, path)
            stanza["synonyms"].append(_unescape(match.group(1)))
        elif key == "is_a":
            stanza["parents"].append(_strip_comment(value))
        elif key == "is_obsolete":
            stanza["obsolete"] = value.lower() == "true"
        elif key == "replaced_by":
            stanza["replaced_by"] = _strip_comment(value)
    finish()
    return terms


def _curie(identifier: str) -> str:
    match = _OBO_IRI_PATTERN.match(identifier)
    if match:
        return f"{match.group(1)}:{match.group(2)}"
    return identifier


def parse_obographs(text: str, path: str = "<json>") -> Dict[str, HpoTerm]:
    """Parse obographs JSON (`graphs[].nodes[]` and `is_a` edges)."""
    if not text.strip():
        return {}
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise OntologyParseError(f"Invalid JSON: {e.msg}", e.lineno, path)

    nodes: Dict[str, dict] = {}
    parents: Dict[str, List[str]] = defaultdict(list)
    for graph in document.get("graphs", []):
        for node in graph.get("nodes", []):
            node_id = _curie(node.get("id", ""))
            if not HPO_ID_PATTERN.match(node_id) or node.get("type", "CLASS") != "CLASS":
                continue
            nodes[node_id] = node
        for edge in graph.get("edges", []):
            if edge.get("pred") not in ("is_a", "rdfs:subClassOf"):
                continue
            child, parent = _curie(edge.get("sub", "")), _curie(edge.get("obj", ""))
            if HPO_ID_PATTERN.match(child) and HPO_ID_PATTERN.match(parent):
                parents[child].append(parent)

    terms: Dict[str, HpoTerm] = {}
    for node_id, node in nodes.items():
        meta = node.get("meta", {}) or {}
        name = node.get("lbl", "")
        if not name:
            raise OntologyParseError(f"Node {node_id} has no label", None, path)
        replaced_by = None
        for prop in meta.get("basicPropertyValues", []):
            if prop.get("pred") in _REPLACED_BY_PREDICATES:
                replaced_by = _curie(prop.get("val", ""))
        terms[node_id] = HpoTerm(
            id=node_id,
            name=name,
            synonyms=tuple(s.get("val", "") for s in meta.get("synonyms", [])),
            parents=tuple(dict.fromkeys(parents.get(node_id, []))),
            obsolete=bool(meta.get("deprecated", False)),
            replaced_by=replaced_by,
        )
    return terms


def validate_parents(terms: Mapping[str, HpoTerm]) -> None:
    dangling = {p for term in terms.values() for p in term.parents if p not in terms}
    if dangling:
        raise OntologyValidationError("Dangling parent references", dangling)


def serialize_obo(terms: Mapping[str, HpoTerm]) -> str:
    """Canonical OBO rendering: stanzas sorted by id, fixed tag order."""
    lines = ["format-version: 1.2", ""]
    for term_id in sorted(terms):
        term = terms[term_id]
        lines.append("[Term]")
        lines.append(f"id: {term.id}")
        lines.append(f"name: {term.name}")
        for synonym in term.synonyms:
            escaped = synonym.replace("\\", "\\\\").replace('"', '\\"')
            lines.append(f'synonym: "{escaped}" EXACT []')
        for parent in term.parents:
            lines.append(f"is_a: {parent}")
        if term.obsolete:
            lines.append("is_obsolete: true")
        if term.replaced_by:
            lines.append(f"replaced_by: {term.replaced_by}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Observable subset, flattening and remapping


def observable_subset(
    terms: Mapping[str, HpoTerm], root_id: str = PHENOTYPIC_ABNORMALITY
) -> Set[str]:
    """Non-obsolete descendants of `root_id`, root excluded."""
    if root_id not in terms:
        raise ConfigurationError(
            f"Observable root {root_id} is not in the ontology; "
            "set ontology.root_id in the config"
        )
    children: Dict[str, List[str]] = defaultdict(list)
    for term in terms.values():
        for parent in term.parents:
            children[parent].append(term.id)

    seen = {root_id}
    queue = deque([root_id])
    while queue:
        for child in children.get(queue.popleft(), []):
            if child not in seen:
                seen.add(child)
                queue.append(child)
    seen.discard(root_id)
    return {term_id for term_id in seen if not terms[term_id].obsolete}


def flatten(
    terms: Mapping[str, HpoTerm],
    keep: Iterable[str],
    version_tag: str = DEFAULT_VERSION_TAG,
) -> FlatDictionary:
    entries = set()
    for term_id in keep:
        term = terms[term_id]
        for surface in (term.name, *term.synonyms):
            normalized = normalize_surface(surface)
            if normalized:
                entries.add((normalized, term_id))
    return FlatDictionary(tuple(entries), version_tag)


def obsolete_remap(terms: Mapping[str, HpoTerm]) -> Dict[str, str]:
    """Map each obsolete id with a replacement to its final live replacement."""
    direct = {
        t.id: t.replaced_by for t in terms.values() if t.obsolete and t.replaced_by
    }
    remap: Dict[str, str] = {}
    for start in direct:
        current, visited = start, {start}
        while current in direct:
            current = direct[current]
            if current in visited:
                raise OntologyValidationError("Cyclic replaced_by chain", visited)
            visited.add(current)
        remap[start] = current
    return remap


def remap_id(hpo_id: Optional[str], remap: Mapping[str, str]) -> Optional[str]:
    if hpo_id is not None and hpo_id in remap:
        logger.debug("Remapped obsolete id %s -> %s", hpo_id, remap[hpo_id])
        return remap[hpo_id]
    return hpo_id


def build_dictionary(
    source: PathLike,
    root_id: str = PHENOTYPIC_ABNORMALITY,
    version_tag: str = DEFAULT_VERSION_TAG,
) -> Tuple[FlatDictionary, Dict[str, str]]:
    terms = parse_ontology(source)
    keep = observable_subset(terms, root_id)
    dictionary = flatten(terms, keep, version_tag)
    remap = obsolete_remap(terms)
    logger.info(
        "Dictionary %s: %d entries over %d observable terms (%d obsolete remaps)",
        version_tag,
        len(dictionary),
        len(keep),
        len(remap),
    )
    return dictionary, remap


# ---------------------------------------------------------------------------
# TSV IO


def write_dictionary(dictionary: FlatDictionary, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dictionary.to_tsv())


def read_dictionary(path: PathLike, version_tag: str = DEFAULT_VERSION_TAG) -> FlatDictionary:
    entries = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not HPO_ID_PATTERN.match(parts[1]):
                raise FormatError(str(path), number, "expected surface<TAB>HP:#######")
            entries.append((parts[0], parts[1]))
    return FlatDictionary(tuple(entries), version_tag)


def write_remap(remap: Mapping[str, str], path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for old in sorted(remap):
            f.write(f"{old}\t{remap[old]}\n")


def read_remap(path: PathLike) -> Dict[str, str]:
    remap = {}
    if not Path(path).exists():
        return remap
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(str(path), number, "expected old_id<TAB>new_id")
            remap[parts[0]] = parts[1]
    return remap
