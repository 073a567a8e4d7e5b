"""Regenerate ``docs/equation_map.md`` from the source annotations."""

from __future__ import annotations

from pathlib import Path

from .docmap import generate_equation_map

ROOT = Path(__file__).resolve().parents[2]
MAP_PATH = ROOT / "docs" / "equation_map.md"


def render() -> str:
    return generate_equation_map(ROOT / "tests")


def main() -> None:
    MAP_PATH.parent.mkdir(parents=True, exist_ok=True)
    MAP_PATH.write_text(render(), encoding="utf-8")
    print(MAP_PATH)


if __name__ == "__main__":
    main()
