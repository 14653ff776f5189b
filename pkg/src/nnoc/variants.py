"""Registry of codec variants.

A variant fixes the context template and the network shape.  The numeric id
is what the bitstream, model and histogram files store.
"""

from dataclasses import dataclass

from .errors import UnknownVariant


@dataclass(frozen=True)
class Variant:
    name: str
    id: int
    template: str
    arch: str  # "softmax2" or "sigmoid1"
    hidden_layers: int


VARIANTS = {
    v.name: v
    for v in (
        Variant("nnoc", 0, "NNOC", "softmax2", 1),
        Variant("fnnoc", 1, "fNNOC", "softmax2", 1),
        Variant("fnnoc1", 2, "fNNOC1", "softmax2", 1),
        Variant("fnnoc2", 3, "fNNOC2", "softmax2", 1),
        Variant("fnnoc3", 4, "fNNOC3", "softmax2", 1),
        Variant("fnnoc4", 5, "fNNOC", "sigmoid1", 1),
        Variant("fnnoc5", 6, "fNNOC", "softmax2", 2),
    )
}
_BY_ID = {v.id: v for v in VARIANTS.values()}


def get_variant(name) -> Variant:
    if isinstance(name, Variant):
        return name
    try:
        return VARIANTS[str(name).lower()]
    except KeyError:
        raise UnknownVariant(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None


def variant_by_id(vid) -> Variant:
    try:
        return _BY_ID[int(vid)]
    except KeyError:
        raise UnknownVariant(f"unknown variant id {vid}") from None
