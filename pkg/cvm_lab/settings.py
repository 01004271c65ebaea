"""
Django settings for the cvm_lab project.

Engine defaults (CVM_*) come from the environment; a .env file at the
project root is read first if present.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')


def env_flag(name, default=False):
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'cvm-lab-local-only')

DEBUG = env_flag('DJANGO_DEBUG', False)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'voter',
]


# Database

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / os.getenv('CVM_DATABASE', 'db.sqlite3'),
    }
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Simulation engine

CVM_EVENT_BUDGET = int(os.getenv('CVM_EVENT_BUDGET', 10 ** 9))
CVM_CONFIDENCE_LEVEL = float(os.getenv('CVM_CONFIDENCE_LEVEL', 0.99))
CVM_THREADS = int(os.getenv('CVM_THREADS', 1))
CVM_BATCH_SIZE = int(os.getenv('CVM_BATCH_SIZE', 65536))
CVM_OUTPUT_DIR = os.getenv('CVM_OUTPUT_DIR', str(BASE_DIR / 'artifacts'))
CVM_LOG_LEVEL = os.getenv('CVM_LOG_LEVEL', 'INFO').upper()
# full-size acceptance runs in the test suite (minutes of CPU)
CVM_ACCEPTANCE_TESTS = env_flag('CVM_ACCEPTANCE_TESTS', False)


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'voter': {
            'handlers': ['console'],
            'level': CVM_LOG_LEVEL,
            'propagate': False,
        },
    },
}
