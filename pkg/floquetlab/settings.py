"""
Django settings for the floquetlab project.

The project hosts the driven molecule-metal dynamics simulator. Django
provides configuration, the run ledger (ORM), the management command
used as the command-line front end, and the test runner.
"""

import os
from pathlib import Path

import dj_database_url

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.getenv(
    "DJANGO_SECRET_KEY",
    "django-insecure-floquetlab-local-only-5k#v1z@q8r!m2t0w7e9y3u6i4o",
)

def _get_bool(name: str, default: str = "0") -> bool:
    return os.getenv(name, default).lower() in {"1", "true", "yes"}


def _get_int(name: str, default: str | None = None) -> int | None:
    raw = os.getenv(name, default)
    if raw in (None, ""):
        return None
    return int(raw)


DEBUG = _get_bool("DJANGO_DEBUG", "1")


# Application definition

INSTALLED_APPS = [
    "floquet_dynamics.apps.FloquetDynamicsConfig",
]


# Database
# The run ledger lives here; simulations themselves never need it.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

DATABASE_URL = os.getenv("DATABASE_URL")
if DATABASE_URL:
    DATABASES["default"] = dj_database_url.config(
        default=DATABASE_URL,
        conn_max_age=int(os.getenv("DB_CONN_MAX_AGE", "600")),
    )


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Simulation settings

# Overrides ensemble.worker_count from the run config when set.
FLOQUET_WORKERS = _get_int("FLOQUET_WORKERS")
FLOQUET_OUTPUT_ROOT = Path(os.getenv("FLOQUET_OUTPUT_ROOT", BASE_DIR / "runs"))
FLOQUET_LOG_LEVEL = os.getenv("FLOQUET_LOG_LEVEL", "INFO").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "simple",
        },
    },
    "loggers": {
        "floquet_dynamics": {
            "handlers": ["console"],
            "level": FLOQUET_LOG_LEVEL,
            "propagate": False,
        },
    },
}
