"""The wrapper service: a FastAPI app over a :class:`~recap.core.Recap` instance."""

from .app import BASE_PATH, create_app

__all__ = ["BASE_PATH", "create_app", "app_from_config", "serve"]


def app_from_config(cfg, recap=None):
    from ..core import Recap

    recap = recap or Recap.from_config(cfg)
    return create_app(recap, cfg.service_user, cfg.service_password, cfg.base_path)


def serve(cfg, host: str | None = None, port: int | None = None) -> None:
    import uvicorn

    bind_host, bind_port = cfg.bind
    uvicorn.run(app_from_config(cfg), host=host or bind_host, port=port or bind_port, log_level="info")
