"""Markdown catalog of every registered method, generated from the registry."""

from dualrl.errors import MissingCatalogEntry
from dualrl.registry import CATALOG, SECTIONS

FIELDS = ("method", "anchor", "objective", "variables", "oracle", "tolerance", "test")


def emit_catalog(sections=None, entries=None):
    """Return the catalog document; every section needs a complete entry."""
    sections = SECTIONS if sections is None else tuple(sections)
    entries = CATALOG if entries is None else entries
    out = ["# Objective catalog", "", f"{len(sections)} method sections.", ""]
    for name in sections:
        entry = entries.get(name)
        if entry is None or not all(getattr(entry, f) for f in FIELDS):
            raise MissingCatalogEntry(name)
        out += [
            f"## {name}",
            "",
            f"- method strings: `{entry.method}`",
            f"- topic anchor: {entry.anchor}",
            f"- objective: `{entry.objective}`",
            f"- variables: {entry.variables}",
            f"- oracle: {entry.oracle}",
            f"- tolerance: {entry.tolerance}",
            f"- acceptance test: {entry.test}",
            "",
        ]
    return "\n".join(out)
