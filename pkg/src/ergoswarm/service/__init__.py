"""HTTP service wrapping the scenario engine.

Serve with: uvicorn ergoswarm.service.app:app
"""

from .app import create_app

__all__ = ["create_app"]
