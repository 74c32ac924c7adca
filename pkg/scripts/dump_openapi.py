#!/usr/bin/env python3
"""Regenerate docs/openapi.json from the FastAPI app."""

import json
from pathlib import Path

from protorec.config import ServiceConfig
from protorec.service import create_app


def main() -> None:
    app = create_app(ServiceConfig(log_path="/tmp/protorec-openapi-dump.v1"))
    out = Path(__file__).parent.parent / "docs" / "openapi.json"
    out.write_text(json.dumps(app.openapi(), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
