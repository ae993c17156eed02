"""Shared vocabulary: category synonyms, COCO membership, attribute words."""
from __future__ import annotations

import re

# variant -> canonical category
SYNONYMS: dict[str, str] = {
    "couch": "sofa",
    "settee": "sofa",
    "loveseat": "sofa",
    "armchair": "chair",
    "stool": "chair",
    "television": "tv",
    "tv monitor": "tv",
    "tv set": "tv",
    "potted plant": "plant",
    "houseplant": "plant",
    "house plant": "plant",
    "painting": "picture",
    "artwork": "picture",
    "photo": "picture",
    "photograph": "picture",
    "poster": "picture",
    "framed picture": "picture",
    "stairs": "staircase",
    "stairway": "staircase",
    "steps": "staircase",
    "cupboard": "cabinet",
    "dining table": "table",
    "coffee table": "table",
    "bedside table": "nightstand",
    "night stand": "nightstand",
    "chest of drawers": "dresser",
    "commode": "dresser",
    "closet": "wardrobe",
    "floor lamp": "lamp",
    "table lamp": "lamp",
    "carpet": "rug",
    "mat": "rug",
    "bookcase": "shelf",
    "bookshelf": "shelf",
    "shelves": "shelf",
    "radiator heater": "radiator",
    "looking glass": "mirror",
}

CATEGORIES: frozenset[str] = frozenset(
    {
        "bed", "cabinet", "chair", "desk", "dresser", "lamp", "mirror",
        "nightstand", "picture", "plant", "radiator", "rug", "shelf", "sofa",
        "staircase", "table", "toilet", "tv", "wardrobe", "window", "book",
        "blanket", "pillow", "sink", "bathtub", "refrigerator", "oven",
        "microwave", "clock", "vase", "heater", "rack", "board",
        "kitchen cabinet", "kitchen lower cabinet", "bathroom cabinet",
        "display cabinet", "towel", "curtain", "door", "fireplace",
    }
)

# canonical labels that a COCO-trained closed-set detector can confirm
COCO_CATEGORIES: frozenset[str] = frozenset(
    {
        "chair", "sofa", "plant", "bed", "table", "toilet", "tv", "book",
        "clock", "vase", "sink", "refrigerator", "oven", "microwave",
        "laptop", "bench", "cup", "bottle", "bowl",
    }
)

COLORS: frozenset[str] = frozenset(
    {
        "red", "green", "blue", "yellow", "white", "black", "gray", "grey",
        "brown", "beige", "orange", "purple", "pink", "cream", "gold",
        "silver", "tan", "navy", "teal", "dark", "light",
    }
)

SHAPES: frozenset[str] = frozenset(
    {
        "round", "square", "rectangular", "oval", "circular", "tall",
        "short", "long", "wide", "narrow", "l-shaped", "cylindrical",
        "triangular", "flat",
    }
)

MATERIALS: frozenset[str] = frozenset(
    {
        "wooden", "wood", "metal", "metallic", "glass", "plastic", "leather",
        "fabric", "ceramic", "marble", "stone", "wicker", "velvet", "small",
        "large", "big", "little", "old", "new", "modern", "framed",
    }
)

# phrases the context filter drops: directions, regions, generic stuff
STOP_PHRASES: frozenset[str] = frozenset(
    {
        "corner", "side", "left side", "right side", "middle", "center",
        "centre", "room", "area", "region", "space", "stuff", "thing",
        "things", "item", "items", "object", "objects", "wall", "floor",
        "ceiling", "background", "foreground", "image", "frame", "view",
        "top", "bottom", "front", "back", "left", "right", "way",
    }
)

ARTICLES = ("the", "a", "an", "some", "this", "that")

_SPACE = re.compile(r"[\s_]+")
_STRIP = re.compile(r"[^a-z0-9\- ]")


def normalize(phrase: str) -> str:
    """Lowercase, collapse whitespace/underscores, drop punctuation and leading articles."""
    text = _SPACE.sub(" ", phrase.lower())
    text = _STRIP.sub("", text).strip()
    words = text.split()
    while words and words[0] in ARTICLES:
        words.pop(0)
    return " ".join(words)


def canonical_category(phrase: str, table: dict[str, str] | None = None) -> str:
    """Map a raw noun phrase to its canonical category.

    The longest word-suffix of the normalized phrase found in the synonym
    table or the category list wins, so "the wooden cabinet" -> "cabinet"
    while "kitchen cabinet" stays itself.  Unknown phrases come back
    normalized.
    """
    table = SYNONYMS if table is None else table
    norm = normalize(phrase)
    words = norm.split()
    for start in range(len(words)):
        tail = " ".join(words[start:])
        if tail in table:
            return table[tail]
        if tail in CATEGORIES or tail in table.values():
            return tail
    return norm


def is_coco(category: str) -> bool:
    return canonical_category(category) in COCO_CATEGORIES


def attribute_words(text: str, atype: str) -> frozenset[str]:
    """Vocabulary words of one attribute type mentioned in ``text``."""
    vocab = COLORS if atype == "color" else SHAPES
    words = re.findall(r"[a-z\-]+", text.lower())
    found = {("gray" if w == "grey" else w) for w in words if w in vocab}
    return frozenset(found)
